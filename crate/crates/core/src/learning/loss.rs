use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Forward;
use crate::tensor::{Graph, Tensor, Var};

/// Rows of a contrastive batch must be unit-norm to this tolerance.
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridLossConfig {
    /// Weight on the contrastive term.
    pub gamma: f64,
    /// Contrastive temperature.
    pub tau: f64,
}

impl Default for HybridLossConfig {
    fn default() -> Self {
        HybridLossConfig { gamma: 1.0, tau: 0.5 }
    }
}

impl HybridLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("loss needs tau > 0 and gamma >= 0, got tau={} gamma={}", self.tau, self.gamma)));
        }
        Ok(())
    }
}

fn matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [b, d] if *b > 0 => Ok((*b, *d)),
        s => Err(Error::dim(op, format!("expected a nonempty matrix, got {s:?}"))),
    }
}

/// Mean −log p[y] with p clamped at 1e-12.
pub fn cross_entropy(probabilities: &Tensor, labels: &[usize]) -> Result<f64> {
    let (_, classes) = matrix(probabilities, "cross_entropy")?;
    for (i, row) in probabilities.data().chunks(classes).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("probability row {i} sums to {s}")));
        }
    }
    let mut g = Graph::new();
    let p = g.leaf(probabilities.clone().with_requires_grad(false));
    let loss = g.nll(p, labels)?;
    Ok(g.value(loss)[0])
}

/// Supervised contrastive loss over unit-norm rows of `z`.
pub fn supervised_contrastive(z: &Tensor, labels: &[usize], tau: f64) -> Result<f64> {
    let (_, d) = matrix(z, "supervised_contrastive")?;
    for (i, row) in z.data().chunks(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Contract(format!("embedding row {i} has norm {norm}, expected 1")));
        }
    }
    let mut g = Graph::new();
    let zv = g.leaf(z.clone().with_requires_grad(false));
    let loss = g.supcon(zv, labels, tau)?;
    Ok(g.value(loss)[0])
}

/// Appends CE(probabilities) + γ·SupCon(normalized s_a) to the forward graph.
/// With γ = 0 the contrastive term is skipped entirely.
pub fn hybrid_loss(fwd: &mut Forward, labels: &[usize], cfg: &HybridLossConfig) -> Result<Var> {
    cfg.validate()?;
    let g = &mut fwd.graph;
    let ce = g.nll(fwd.probabilities, labels)?;
    if cfg.gamma == 0.0 {
        return Ok(ce);
    }
    let z = g.l2_normalize(fwd.embedding);
    let scl = g.supcon(z, labels, cfg.tau)?;
    let scl = g.scale(scl, cfg.gamma);
    g.add(ce, scl)
}
