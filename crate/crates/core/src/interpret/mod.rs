//! Node importance as total attention received, and the node-ablation study
//! relating importance to accuracy loss.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::evaluate;
use crate::model::{forward_batch, AttentionMatrix, ModelState};
use crate::radar::WindowSample;
use crate::seed;
use crate::tensor::{Mode, Tensor};

const STOCHASTIC_TOLERANCE: f64 = 1e-5;

/// I(j) = Σᵢ α[i][j]. Rows must be distributions.
pub fn node_importance(alpha: &AttentionMatrix) -> Result<Vec<f64>> {
    let n = alpha.nodes();
    for i in 0..n {
        let row = alpha.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOLERANCE || row.iter().any(|&a| a < 0.0) {
            return Err(Error::Contract(format!("attention row {i} is not a distribution (sum {s})")));
        }
    }
    Ok((0..n).map(|j| (0..n).map(|i| alpha.at(i, j)).sum()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetImportance {
    /// Mean importance over samples.
    pub mean: Vec<f64>,
    /// How often each node had the largest importance.
    pub argmax_counts: Vec<usize>,
    pub per_sample: Vec<Vec<f64>>,
}

/// Infer-mode importance over a sample set.
pub fn dataset_importance(state: &ModelState, samples: &[WindowSample]) -> Result<DatasetImportance> {
    if samples.is_empty() {
        return Err(Error::Config("importance needs at least one sample".into()));
    }
    let n = state.config.nodes;
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut rng = seed::rng(0, &[]);
    for chunk in samples.chunks(32) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        for a in &forward_batch(state, &refs, Mode::Infer, &mut rng)?.attention {
            per_sample.push(node_importance(a)?);
        }
    }
    let mut mean = vec![0.0; n];
    let mut argmax_counts = vec![0; n];
    for imp in &per_sample {
        mean.iter_mut().zip(imp).for_each(|(m, v)| *m += v / samples.len() as f64);
        argmax_counts[crate::model::argmax(imp)] += 1;
    }
    Ok(DatasetImportance { mean, argmax_counts, per_sample })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    Zeros,
    /// Gaussian noise matching each channel's mean and std.
    Random,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Zeros => "zeros",
            AblationMode::Random => "random",
        }
    }
}

/// Copy of `sample` with node `node`'s window replaced.
pub fn ablate(sample: &WindowSample, node: usize, mode: AblationMode, seed: u64) -> Result<WindowSample> {
    let n = sample.nodes.len();
    if node >= n {
        return Err(Error::Bounds(format!("node {node} out of range for {n} nodes")));
    }
    let mut out = sample.clone();
    let original = &sample.nodes[node];
    out.nodes[node] = match mode {
        AblationMode::Zeros => Tensor::zeros(original.shape()),
        AblationMode::Random => {
            let channels = *original.shape().last().unwrap_or(&1);
            let mut data = original.data().to_vec();
            let mut rng = seed::rng(seed, &[0xAB1, node as u64]);
            for ch in 0..channels {
                let vals: Vec<f64> = original.data().iter().skip(ch).step_by(channels).copied().collect();
                let m = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / m;
                let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
                let noise = Normal::new(mean, std).map_err(|e| Error::NonFinite(format!("channel {ch} std {std}: {e}")))?;
                for v in data.iter_mut().skip(ch).step_by(channels) {
                    *v = noise.sample(&mut rng);
                }
            }
            Tensor::new(original.shape().to_vec(), data)?
        }
    };
    Ok(out)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired data");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub node: usize,
    pub mode: AblationMode,
    pub importance: f64,
    /// 1 = most important.
    pub importance_rank: usize,
    pub argmax_count: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub baseline_accuracy: f64,
    pub importance: DatasetImportance,
    /// Zero-ablation rows for every node, then random-ablation rows.
    pub rows: Vec<AblationRow>,
    /// Rank correlation of importance with the zero-ablation accuracy drop.
    pub spearman_zero: f64,
    pub spearman_random: f64,
}

impl AblationResult {
    pub fn drops(&self, mode: AblationMode) -> Vec<f64> {
        self.rows.iter().filter(|r| r.mode == mode).map(|r| self.baseline_accuracy - r.accuracy).collect()
    }

    /// Columns node, mode, importance, argmax_count, acc_zero_ablation,
    /// acc_random_ablation, baseline_acc. A `none` control row comes first
    /// and a `spearman` row (correlation in the importance column) last.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("writing ablation csv", e.into());
        let base = self.baseline_accuracy.to_string();
        w.write_record(["node", "mode", "importance", "argmax_count", "acc_zero_ablation", "acc_random_ablation", "baseline_acc"])
            .map_err(io)?;
        w.write_record(["none", "none", "", "", "", "", &base]).map_err(io)?;
        for r in &self.rows {
            let acc = r.accuracy.to_string();
            let (zero, random) = match r.mode {
                AblationMode::Zeros => (acc.as_str(), ""),
                AblationMode::Random => ("", acc.as_str()),
            };
            w.write_record([
                &r.node.to_string(),
                r.mode.name(),
                &r.importance.to_string(),
                &r.argmax_count.to_string(),
                zero,
                random,
                &base,
            ])
            .map_err(io)?;
        }
        w.write_record(["spearman", "zeros", &self.spearman_zero.to_string(), "", "", "", ""]).map_err(io)?;
        w.flush().map_err(|e| Error::io("writing ablation csv", e))
    }
}

/// Ablates every node in both modes. Random-mode accuracy is averaged over
/// `seeds`; the zero mode is deterministic.
pub fn importance_ablation_study(state: &ModelState, samples: &[WindowSample], seeds: &[u64]) -> Result<AblationResult> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation study needs at least one seed".into()));
    }
    let baseline_accuracy = evaluate(state, samples)?.accuracy;
    let importance = dataset_importance(state, samples)?;
    let n = state.config.nodes;
    let order = ranks(&importance.mean.iter().map(|v| -v).collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(2 * n);
    for mode in [AblationMode::Zeros, AblationMode::Random] {
        for node in 0..n {
            let runs: &[u64] = if mode == AblationMode::Zeros { &seeds[..1] } else { seeds };
            let mut acc = 0.0;
            for &s in runs {
                let ablated = samples
                    .iter()
                    .enumerate()
                    .map(|(k, x)| ablate(x, node, mode, seed::derive(s, &[k as u64])))
                    .collect::<Result<Vec<_>>>()?;
                acc += evaluate(state, &ablated)?.accuracy / runs.len() as f64;
            }
            rows.push(AblationRow {
                node,
                mode,
                importance: importance.mean[node],
                importance_rank: order[node].round() as usize,
                argmax_count: importance.argmax_counts[node],
                accuracy: acc,
            });
        }
    }
    let mut result = AblationResult { baseline_accuracy, importance, rows, spearman_zero: 0.0, spearman_random: 0.0 };
    result.spearman_zero = spearman(&result.importance.mean, &result.drops(AblationMode::Zeros));
    result.spearman_random = spearman(&result.importance.mean, &result.drops(AblationMode::Random));
    Ok(result)
}

#[cfg(test)]
mod tests;
