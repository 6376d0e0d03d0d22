use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::{Mode, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const PROB_FLOOR: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { a: Var, m: usize, n: usize },
    Add { a: Var, b: Var },
    AddRowBias { x: Var, bias: Var },
    Scale { a: Var, c: f64 },
    Relu { a: Var },
    Softmax { a: Var },
    Conv2d { x: Var, k: Var, bias: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool, channels: usize, plane: usize },
    AvgPool { x: Var, planes: usize, h: usize, w: usize, oh: usize, ow: usize },
    MeanChannels { x: Var, batch: usize, channels: usize, plane: usize },
    Dropout { a: Var, mask: Vec<f64> },
    Reshape { a: Var },
    L2Normalize { a: Var, norms: Vec<f64> },
    RowSlice { a: Var, start: usize, cols: usize },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var>, rows: usize },
    Sum { a: Var },
    Mean { a: Var },
    Nll { p: Var, labels: Vec<usize>, classes: usize },
    SupCon { z: Var, dlogits: Vec<f64>, dim: usize, tau: f64 },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// The computation record: an append-only list of nodes in execution order.
///
/// Node inputs always precede the node itself, so a single reverse sweep
/// visits every consumer before its producers.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { shape, data, requires_grad, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a tensor; it is differentiated iff its `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let shape = t.shape().to_vec();
        self.nodes.push(Node { shape, data: t.into_data(), requires_grad, grad: None, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Copy of a node as a [`Tensor`], with its gradient attached when populated.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        let mut t = Tensor::new(n.shape.clone(), n.data.clone())
            .expect("graph nodes keep consistent shapes")
            .with_requires_grad(n.requires_grad);
        if let Some(g) = &n.grad {
            t.set_grad(g.clone()).expect("gradient shaped like data");
        }
        t
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    // ---- ops ------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        Ok(self.push(vec![m, n], out, &[a, b], Op::MatMul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let out = kernels::transpose(self.value(a), m, n);
        Ok(self.push(vec![n, m], out, &[a], Op::Transpose { a, m, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "add",
                format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::Add { a, b }))
    }

    /// Adds `bias` (length = last extent of `x`) to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return Err(Error::dim(
                "add_row_bias",
                format!("bias {:?} does not match rows of {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let b = self.value(bias);
        let out = self.value(x).chunks(n).flat_map(|row| row.iter().zip(b).map(|(v, c)| v + c)).collect();
        Ok(self.push(self.shape(x).to_vec(), out, &[x, bias], Op::AddRowBias { x, bias }))
    }

    /// `x·W + b` for x: [m×k], W: [k×n], b: [n].
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|v| v * c).collect();
        self.push(self.shape(a).to_vec(), out, &[a], Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&v| v.max(0.0)).collect();
        self.push(self.shape(a).to_vec(), out, &[a], Op::Relu { a })
    }

    /// Softmax over the last axis, stabilized by row-max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().unwrap_or(&1);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(self.shape(a).to_vec(), out, &[a], Op::Softmax { a })
    }

    /// Stride-1 cross-correlation with zero padding.
    ///
    /// `x` is `[B, C_in, H, W]` or a single image `[C_in, H, W]`;
    /// `kernels` is `[C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Option<Var>, padding: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, h, w, single) = match xs[..] {
            [b, c, h, w] => (b, c, h, w, false),
            [c, h, w] => (1, c, h, w, true),
            _ => return Err(Error::dim("conv2d", format!("input must be 3-D or 4-D, got {xs:?}"))),
        };
        let ks = self.shape(kernels).to_vec();
        let [c_out, kc, kh, kw] = ks[..] else {
            return Err(Error::dim("conv2d", format!("kernels must be 4-D, got {ks:?}")));
        };
        if kc != c_in {
            return Err(Error::dim("conv2d", format!("input {xs:?} has {c_in} channels, kernels {ks:?} expect {kc}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::dim("conv2d", format!("bias {:?} for {c_out} output channels", self.shape(b))));
            }
        }
        let (ph, pw) = padding;
        let oh = (h + 2 * ph) as isize - kh as isize + 1;
        let ow = (w + 2 * pw) as isize - kw as isize + 1;
        if oh < 1 || ow < 1 {
            return Err(Error::dim(
                "conv2d",
                format!("non-positive output extent {oh}x{ow} for input {xs:?}, kernels {ks:?}, padding {padding:?}"),
            ));
        }
        let geom = ConvGeom { batch, c_in, h, w, c_out, kh, kw, ph, pw, oh: oh as usize, ow: ow as usize };
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(kernels),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let shape = if single { vec![c_out, geom.oh, geom.ow] } else { vec![batch, c_out, geom.oh, geom.ow] };
        let mut inputs = vec![x, kernels];
        inputs.extend(bias);
        Ok(self.push(shape, out, &inputs, Op::Conv2d { x, k: kernels, bias, geom }))
    }

    /// Batch norm over `[B, C, H, W]` with per-channel affine `gamma`, `beta`.
    ///
    /// Train mode normalizes with batch statistics and folds them into `stats`
    /// (momentum [`BN_MOMENTUM`], unbiased variance); infer mode reads `stats`.
    pub fn batch_norm2d(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut BnStats, mode: Mode) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [batch, channels, h, w] = xs[..] else {
            return Err(Error::dim("batch_norm2d", format!("input must be 4-D, got {xs:?}")));
        };
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] || stats.channels() != channels {
            return Err(Error::dim(
                "batch_norm2d",
                format!("{channels} channels but gamma {:?}, beta {:?}, stats {}", self.shape(gamma), self.shape(beta), stats.channels()),
            ));
        }
        let plane = h * w;
        let count = batch * plane;
        let xv = self.value(x);
        let (mean, var) = match mode {
            Mode::Train => {
                if count <= 1 {
                    return Err(Error::DegenerateBatch(format!(
                        "batch norm over {count} value per channel in train mode"
                    )));
                }
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += xv[(b * channels + c) * plane..][..plane].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut q = 0.0;
                    for b in 0..batch {
                        q += xv[(b * channels + c) * plane..][..plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = q / count as f64;
                }
                for c in 0..channels {
                    let unbiased = var[c] * count as f64 / (count - 1) as f64;
                    stats.mean[c] = (1.0 - BN_MOMENTUM) * stats.mean[c] + BN_MOMENTUM * mean[c];
                    stats.var[c] = (1.0 - BN_MOMENTUM) * stats.var[c] + BN_MOMENTUM * unbiased;
                }
                (mean, var)
            }
            Mode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * plane;
                for i in off..off + plane {
                    let xh = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = xh;
                    out[i] = g[c] * xh + bt[c];
                }
            }
        }
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: mode == Mode::Train, channels, plane };
        Ok(self.push(xs, out, &[x, gamma, beta], op))
    }

    /// Adaptive average pooling of the two trailing axes of a 3-D or 4-D input.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 || xs.len() > 4 {
            return Err(Error::dim("adaptive_avg_pool2d", format!("input must be 3-D or 4-D, got {xs:?}")));
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (oh, ow) = target;
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return Err(Error::dim(
                "adaptive_avg_pool2d",
                format!("cannot pool {h}x{w} to {oh}x{ow}"),
            ));
        }
        let planes = xs[..xs.len() - 2].iter().product();
        let out = kernels::avg_pool_forward(self.value(x), planes, h, w, oh, ow);
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.extend([oh, ow]);
        Ok(self.push(shape, out, &[x], Op::AvgPool { x, planes, h, w, oh, ow }))
    }

    /// Mean over the channel axis of `[B, C, H, W]`, keeping it as extent 1.
    pub fn mean_channels(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [batch, channels, h, w] = xs[..] else {
            return Err(Error::dim("mean_channels", format!("input must be 4-D, got {xs:?}")));
        };
        let plane = h * w;
        let xv = self.value(x);
        let mut out = vec![0.0; batch * plane];
        for b in 0..batch {
            for c in 0..channels {
                for (o, v) in out[b * plane..][..plane].iter_mut().zip(&xv[(b * channels + c) * plane..][..plane]) {
                    *o += v / channels as f64;
                }
            }
        }
        Ok(self.push(vec![batch, 1, h, w], out, &[x], Op::MeanChannels { x, batch, channels, plane }))
    }

    /// Inverted dropout: train mode zeroes with probability `rate` and scales
    /// survivors by `1/(1-rate)`; infer mode passes values through untouched.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        let mask: Vec<f64> = match mode {
            Mode::Infer => vec![1.0; self.value(a).len()],
            Mode::Train => {
                let keep = 1.0 / (1.0 - rate);
                (0..self.value(a).len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
            }
        };
        let out = self.value(a).iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(self.shape(a).to_vec(), out, &[a], Op::Dropout { a, mask }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::dim("reshape", format!("cannot view {:?} as {shape:?}", self.shape(a))));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape, out, &[a], Op::Reshape { a }))
    }

    /// Collapses all axes after the first: `[B, ...] -> [B, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let lead = s.first().copied().unwrap_or(1);
        let rest = s.iter().skip(1).product();
        self.reshape(a, vec![lead, rest])
    }

    /// Scales each row (last axis) to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().unwrap_or(&1);
        let mut out = self.value(a).to_vec();
        let mut norms = Vec::with_capacity(out.len() / n.max(1));
        for row in out.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        self.push(self.shape(a).to_vec(), out, &[a], Op::L2Normalize { a, norms })
    }

    /// Rows `start..start+len` of a matrix.
    pub fn row_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "row_slice")?;
        if start + len > m {
            return Err(Error::dim("row_slice", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(vec![len, n], out, &[a], Op::RowSlice { a, start, cols: n }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let (_, n) = self.dims2(*parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, n2) = self.dims2(p, "concat_rows")?;
            if n2 != n {
                return Err(Error::dim("concat_rows", format!("column counts {n} and {n2}")));
            }
            rows += m;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, n], out, parts, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let (m, _) = self.dims2(*parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m2, n) = self.dims2(p, "concat_cols")?;
            if m2 != m {
                return Err(Error::dim("concat_cols", format!("row counts {m} and {m2}")));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &n) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * n..(r + 1) * n]);
            }
        }
        Ok(self.push(vec![m, total], out, parts, Op::ConcatCols { parts: parts.to_vec(), rows: m }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Vec::new(), vec![s], &[a], Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Vec::new(), vec![s], &[a], Op::Mean { a })
    }

    /// Mean negative log-likelihood of `labels` under row-probabilities `p`,
    /// with probabilities clamped at 1e-12.
    pub fn nll(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (b, classes) = self.dims2(p, "nll")?;
        if labels.len() != b {
            return Err(Error::dim("nll", format!("{b} rows but {} labels", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label, classes });
        }
        let pv = self.value(p);
        let loss = labels.iter().enumerate().map(|(i, &y)| -pv[i * classes + y].max(PROB_FLOOR).ln()).sum::<f64>() / b as f64;
        Ok(self.push(Vec::new(), vec![loss], &[p], Op::Nll { p, labels: labels.to_vec(), classes }))
    }

    /// Supervised contrastive loss over rows of `z` (expected unit-norm).
    ///
    /// Anchors without any same-class partner in the batch contribute zero.
    pub fn supcon(&mut self, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
        let (b, dim) = self.dims2(z, "supcon")?;
        if labels.len() != b {
            return Err(Error::dim("supcon", format!("{b} rows but {} labels", labels.len())));
        }
        if tau <= 0.0 {
            return Err(Error::Contract(format!("temperature {tau} must be positive")));
        }
        let zv = self.value(z);
        let sim = kernels::matmul_nt(zv, zv, b, dim, b);
        // dlogits[i][k] holds dL/d(z_i·z_k/τ) for the anchor-i row.
        let mut dlogits = vec![0.0; b * b];
        let mut loss = 0.0;
        for i in 0..b {
            let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if positives.is_empty() {
                continue;
            }
            let logits: Vec<f64> = (0..b).map(|k| sim[i * b + k] / tau).collect();
            let mx = (0..b).filter(|&k| k != i).map(|k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..b).filter(|&k| k != i).map(|k| (logits[k] - mx).exp()).sum();
            let log_denom = mx + denom.ln();
            let inv_p = 1.0 / positives.len() as f64;
            loss += positives.iter().map(|&j| log_denom - logits[j]).sum::<f64>() * inv_p;
            for k in (0..b).filter(|&k| k != i) {
                dlogits[i * b + k] += (logits[k] - log_denom).exp() / b as f64;
            }
            for &j in &positives {
                dlogits[i * b + j] -= inv_p / b as f64;
            }
        }
        loss /= b as f64;
        Ok(self.push(Vec::new(), vec![loss], &[z], Op::SupCon { z, dlogits, dim, tau }))
    }

    // ---- reverse sweep --------------------------------------------------

    /// Populates gradients of the scalar `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dout) = self.nodes[idx].grad.take() else { continue };
            let contributions = self.input_grads(idx, &dout);
            self.nodes[idx].grad = Some(dout);
            for (input, g) in contributions {
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, idx: usize, d: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.wants(a) {
                    out.push((a, kernels::matmul_nt(d, self.value(b), m, n, k)));
                }
                if self.wants(b) {
                    out.push((b, kernels::matmul_tn(self.value(a), d, m, k, n)));
                }
            }
            &Op::Transpose { a, m, n } => out.push((a, kernels::transpose(d, n, m))),
            &Op::Add { a, b } => {
                out.push((a, d.to_vec()));
                out.push((b, d.to_vec()));
            }
            &Op::AddRowBias { x, bias } => {
                let n = self.value(bias).len();
                let mut db = vec![0.0; n];
                for row in d.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                out.push((x, d.to_vec()));
                out.push((bias, db));
            }
            &Op::Scale { a, c } => out.push((a, d.iter().map(|v| v * c).collect())),
            &Op::Relu { a } => {
                let g = self.value(a).iter().zip(d).map(|(&x, &dv)| if x > 0.0 { dv } else { 0.0 }).collect();
                out.push((a, g));
            }
            &Op::Softmax { a } => {
                let n = *node.shape.last().unwrap_or(&1);
                let mut g = vec![0.0; d.len()];
                for ((yr, dr), gr) in node.data.chunks(n).zip(d.chunks(n)).zip(g.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(dr).map(|(y, dv)| y * dv).sum();
                    for ((gv, y), dv) in gr.iter_mut().zip(yr).zip(dr) {
                        *gv = y * (dv - dot);
                    }
                }
                out.push((a, g));
            }
            &Op::Conv2d { x, k, bias, geom } => {
                let (dx, dk, db) = kernels::conv2d_backward(self.value(x), self.value(k), d, &geom);
                out.push((x, dx));
                out.push((k, dk));
                if let Some(b) = bias {
                    out.push((b, db));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, channels, plane } => {
                let (channels, plane) = (*channels, *plane);
                let batch = d.len() / (channels * plane);
                let g = self.value(*gamma);
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * plane;
                        for i in off..off + plane {
                            dgamma[c] += d[i] * xhat[i];
                            dbeta[c] += d[i];
                        }
                    }
                }
                let mut dx = vec![0.0; d.len()];
                let count = (batch * plane) as f64;
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * plane;
                        for i in off..off + plane {
                            dx[i] = if *train {
                                g[c] * inv_std[c] * (d[i] - dbeta[c] / count - xhat[i] * dgamma[c] / count)
                            } else {
                                g[c] * inv_std[c] * d[i]
                            };
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            &Op::AvgPool { x, planes, h, w, oh, ow } => {
                out.push((x, kernels::avg_pool_backward(d, planes, h, w, oh, ow)));
            }
            &Op::MeanChannels { x, batch, channels, plane } => {
                let mut g = vec![0.0; batch * channels * plane];
                for b in 0..batch {
                    for c in 0..channels {
                        for (gv, dv) in g[(b * channels + c) * plane..][..plane].iter_mut().zip(&d[b * plane..][..plane]) {
                            *gv = dv / channels as f64;
                        }
                    }
                }
                out.push((x, g));
            }
            Op::Dropout { a, mask } => out.push((*a, d.iter().zip(mask).map(|(v, m)| v * m).collect())),
            &Op::Reshape { a } => out.push((a, d.to_vec())),
            Op::L2Normalize { a, norms } => {
                let n = *node.shape.last().unwrap_or(&1);
                let mut g = vec![0.0; d.len()];
                for (r, ((yr, dr), gr)) in node.data.chunks(n).zip(d.chunks(n)).zip(g.chunks_mut(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(dr).map(|(y, dv)| y * dv).sum();
                    for ((gv, y), dv) in gr.iter_mut().zip(yr).zip(dr) {
                        *gv = (dv - y * dot) / norms[r];
                    }
                }
                out.push((*a, g));
            }
            &Op::RowSlice { a, start, cols } => {
                let mut g = vec![0.0; self.value(a).len()];
                g[start * cols..start * cols + d.len()].copy_from_slice(d);
                out.push((a, g));
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    out.push((p, d[off..off + len].to_vec()));
                    off += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total = d.len() / rows;
                let mut col = 0;
                for &p in parts {
                    let n = self.value(p).len() / rows;
                    let mut g = Vec::with_capacity(rows * n);
                    for r in 0..*rows {
                        g.extend_from_slice(&d[r * total + col..r * total + col + n]);
                    }
                    out.push((p, g));
                    col += n;
                }
            }
            &Op::Sum { a } => out.push((a, vec![d[0]; self.value(a).len()])),
            &Op::Mean { a } => {
                let len = self.value(a).len();
                out.push((a, vec![d[0] / len as f64; len]));
            }
            Op::Nll { p, labels, classes } => {
                let pv = self.value(*p);
                let b = labels.len() as f64;
                let mut g = vec![0.0; pv.len()];
                for (i, &y) in labels.iter().enumerate() {
                    let pi = pv[i * classes + y];
                    if pi > PROB_FLOOR {
                        g[i * classes + y] = -d[0] / (b * pi);
                    }
                }
                out.push((*p, g));
            }
            Op::SupCon { z, dlogits, dim, tau } => {
                let zv = self.value(*z);
                let b = zv.len() / dim;
                // dz_i += Σ_k g_ik z_k / τ ; dz_k += g_ik z_i / τ
                let scale = d[0] / tau;
                let mut g = kernels::matmul(dlogits, zv, b, b, *dim);
                let gt = kernels::matmul_tn(dlogits, zv, b, b, *dim);
                g.iter_mut().zip(&gt).for_each(|(a, v)| *a = (*a + v) * scale);
                out.push((*z, g));
            }
        }
        out
    }
}
