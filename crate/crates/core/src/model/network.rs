use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv_geometry, ModelState, PoolChannels, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::radar::WindowSample;
use crate::tensor::{BnStats, Graph, Mode, Tensor, Var};

/// Head-averaged N × N attention weights; rows are distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::dim("attention", format!("{n}x{n} matrix with {} entries", data.len())));
        }
        Ok(AttentionMatrix { n, data })
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
    /// Flattened fused features s_a (length N·d_model).
    pub embedding: Vec<f64>,
    pub attention: AttentionMatrix,
}

impl ModelOutput {
    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }
}

/// Index of the largest entry (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// A recorded batch forward pass; kept alive so the caller can backpropagate.
pub struct Forward {
    pub graph: Graph,
    /// One graph leaf per parameter, schema order.
    pub params: Vec<Var>,
    /// Stacked node features S, `[B·N, d_model]`.
    pub features: Var,
    /// Fused features, `[B·N, d_model]`.
    pub fused: Var,
    /// s_a, `[B, N·d_model]`.
    pub embedding: Var,
    pub logits: Var,
    pub probabilities: Var,
    pub attention: Vec<AttentionMatrix>,
    /// Running statistics after this pass (train mode only).
    pub bn: Option<[BnStats; 3]>,
}

impl Forward {
    pub fn batch(&self) -> usize {
        self.attention.len()
    }

    pub fn outputs(&self) -> Vec<ModelOutput> {
        let g = &self.graph;
        let classes = g.shape(self.logits)[1];
        let flat = g.shape(self.embedding)[1];
        self.attention
            .iter()
            .enumerate()
            .map(|(b, a)| ModelOutput {
                probabilities: g.value(self.probabilities)[b * classes..(b + 1) * classes].to_vec(),
                logits: g.value(self.logits)[b * classes..(b + 1) * classes].to_vec(),
                embedding: g.value(self.embedding)[b * flat..(b + 1) * flat].to_vec(),
                attention: a.clone(),
            })
            .collect()
    }
}

fn check_window(state: &ModelState, t: &Tensor) -> Result<()> {
    let c = &state.config;
    if t.shape() != [c.fast_bins, c.window, INPUT_CHANNELS] {
        return Err(Error::dim(
            "encode_node",
            format!("window {:?} does not match configured [{}, {}, 2]", t.shape(), c.fast_bins, c.window),
        ));
    }
    Ok(())
}

/// Stacks node windows `[F, W, 2]` into a channel-first batch `[B·N, 2, F, W]`.
fn input_batch(state: &ModelState, samples: &[&WindowSample]) -> Result<Tensor> {
    let c = &state.config;
    let plane = c.fast_bins * c.window;
    let mut data = Vec::with_capacity(samples.len() * c.nodes * 2 * plane);
    for s in samples {
        if s.nodes.len() != c.nodes {
            return Err(Error::dim("forward", format!("sample has {} nodes, model expects {}", s.nodes.len(), c.nodes)));
        }
        for t in &s.nodes {
            check_window(state, t)?;
            let v = t.data();
            for ch in 0..INPUT_CHANNELS {
                data.extend(v.iter().skip(ch).step_by(INPUT_CHANNELS));
            }
        }
    }
    Tensor::new(vec![samples.len() * c.nodes, INPUT_CHANNELS, c.fast_bins, c.window], data)
}

fn register_params(g: &mut Graph, state: &ModelState) -> Vec<Var> {
    state.params.iter().map(|p| g.param(p.tensor.clone())).collect()
}

/// conv→BN→ReLU ×3, 1×1 conv, adaptive average pool, flatten: `[B·N, d_model]`.
fn build_encoder(g: &mut Graph, state: &ModelState, pv: &[Var], x: Var, mode: Mode, bn: &mut [BnStats; 3]) -> Result<Var> {
    let l = state.layout();
    let mut h = x;
    for i in 0..3 {
        let (_, pad) = conv_geometry(i);
        h = g.conv2d(h, pv[l.conv[i]], None, pad)?;
        h = g.batch_norm2d(h, pv[l.bn_gamma[i]], pv[l.bn_beta[i]], &mut bn[i], mode)?;
        h = g.relu(h);
    }
    h = g.conv2d(h, pv[l.conv1x1_weight], Some(pv[l.conv1x1_bias]), (0, 0))?;
    h = g.adaptive_avg_pool2d(h, state.config.pool)?;
    if state.config.pool_channels == PoolChannels::Average {
        h = g.mean_channels(h)?;
    }
    g.flatten(h)
}

/// Multi-head self-attention across the N node rows of each sample, output
/// projection, then the residual `+ S`.
fn build_fusion(g: &mut Graph, state: &ModelState, pv: &[Var], s: Var, batch: usize) -> Result<(Var, Vec<AttentionMatrix>)> {
    let c = &state.config;
    let l = state.layout();
    let n = c.nodes;
    let inv_sqrt_dk = 1.0 / (c.head_dim as f64).sqrt();
    let mut projected = Vec::with_capacity(c.heads);
    for &(wq, wk, wv) in &l.heads {
        projected.push((g.matmul(s, pv[wq])?, g.matmul(s, pv[wk])?, g.matmul(s, pv[wv])?));
    }
    let mut attention = Vec::with_capacity(batch);
    let mut per_sample = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut heads_out = Vec::with_capacity(c.heads);
        let mut avg = vec![0.0; n * n];
        for &(q, k, v) in &projected {
            let qb = g.row_slice(q, b * n, n)?;
            let kb = g.row_slice(k, b * n, n)?;
            let vb = g.row_slice(v, b * n, n)?;
            let kt = g.transpose(kb)?;
            let scores = g.matmul(qb, kt)?;
            let scores = g.scale(scores, inv_sqrt_dk);
            let alpha = g.softmax(scores);
            avg.iter_mut().zip(g.value(alpha)).for_each(|(a, x)| *a += x / c.heads as f64);
            heads_out.push(g.matmul(alpha, vb)?);
        }
        attention.push(AttentionMatrix::new(n, avg)?);
        per_sample.push(g.concat_cols(&heads_out)?);
    }
    let concat = g.concat_rows(&per_sample)?;
    let projected_out = g.linear(concat, pv[l.out_weight], Some(pv[l.out_bias]))?;
    let fused = g.add(projected_out, s)?;
    Ok((fused, attention))
}

/// dense→ReLU→dropout→dense→softmax over `[B, N·d_model]`.
fn build_classifier<R: Rng + ?Sized>(
    g: &mut Graph,
    state: &ModelState,
    pv: &[Var],
    flat: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<(Var, Var)> {
    let l = state.layout();
    let h = g.linear(flat, pv[l.dense1_weight], Some(pv[l.dense1_bias]))?;
    let h = g.relu(h);
    let h = g.dropout(h, state.config.dropout, mode, rng)?;
    let logits = g.linear(h, pv[l.dense2_weight], Some(pv[l.dense2_bias]))?;
    let probs = g.softmax(logits);
    Ok((logits, probs))
}

fn finish<R: Rng + ?Sized>(
    mut g: Graph,
    pv: Vec<Var>,
    state: &ModelState,
    features: Var,
    batch: usize,
    mode: Mode,
    bn: Option<[BnStats; 3]>,
    rng: &mut R,
) -> Result<Forward> {
    let (fused, attention) = build_fusion(&mut g, state, &pv, features, batch)?;
    let flat_len = state.config.nodes * state.config.d_model();
    let embedding = g.reshape(fused, vec![batch, flat_len])?;
    let (logits, probabilities) = build_classifier(&mut g, state, &pv, embedding, mode, rng)?;
    Ok(Forward { graph: g, params: pv, features, fused, embedding, logits, probabilities, attention, bn })
}

/// Full forward pass over a batch. Train mode uses batch statistics in the
/// encoder (over all B·N node windows) and returns the updated running stats.
pub fn forward_batch<R: Rng + ?Sized>(state: &ModelState, samples: &[&WindowSample], mode: Mode, rng: &mut R) -> Result<Forward> {
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut g = Graph::new();
    let pv = register_params(&mut g, state);
    let x = g.leaf(input_batch(state, samples)?);
    let mut bn = state.bn.clone();
    let features = build_encoder(&mut g, state, &pv, x, mode, &mut bn)?;
    let bn = (mode == Mode::Train).then_some(bn);
    finish(g, pv, state, features, samples.len(), mode, bn, rng)
}

/// Fusion and classification from already-encoded node features `[B·N, d_model]`.
pub fn forward_from_features<R: Rng + ?Sized>(state: &ModelState, features: Tensor, mode: Mode, rng: &mut R) -> Result<Forward> {
    let c = &state.config;
    let d = c.d_model();
    if features.shape().len() != 2 || features.shape()[1] != d || !features.shape()[0].is_multiple_of(c.nodes) || features.numel() == 0 {
        return Err(Error::dim("fuse", format!("features {:?} are not [B·{}, {d}]", features.shape(), c.nodes)));
    }
    let batch = features.shape()[0] / c.nodes;
    let mut g = Graph::new();
    let pv = register_params(&mut g, state);
    let s = g.leaf(features);
    finish(g, pv, state, s, batch, mode, None, rng)
}

/// Infer-mode node features, `[B·N, d_model]`.
pub fn node_features(state: &ModelState, samples: &[&WindowSample]) -> Result<Tensor> {
    let mut g = Graph::new();
    let pv = register_params(&mut g, state);
    let x = g.leaf(input_batch(state, samples)?);
    let mut bn = state.bn.clone();
    let s = build_encoder(&mut g, state, &pv, x, Mode::Infer, &mut bn)?;
    Ok(g.tensor(s).with_requires_grad(false))
}

/// Encodes one node window `[F, W, 2]` into its d_model feature vector.
pub fn encode_node(state: &ModelState, window: &Tensor, mode: Mode) -> Result<Vec<f64>> {
    check_window(state, window)?;
    let c = &state.config;
    let plane = c.fast_bins * c.window;
    let mut data = Vec::with_capacity(2 * plane);
    for ch in 0..INPUT_CHANNELS {
        data.extend(window.data().iter().skip(ch).step_by(INPUT_CHANNELS));
    }
    let mut g = Graph::new();
    let pv = register_params(&mut g, state);
    let x = g.leaf(Tensor::new(vec![1, INPUT_CHANNELS, c.fast_bins, c.window], data)?);
    let mut bn = state.bn.clone();
    let s = build_encoder(&mut g, state, &pv, x, mode, &mut bn)?;
    Ok(g.value(s).to_vec())
}

/// Attention fusion of one sample's `[N, d_model]` feature matrix.
pub fn fuse(state: &ModelState, s: &Tensor) -> Result<(Tensor, AttentionMatrix)> {
    let c = &state.config;
    if s.shape() != [c.nodes, c.d_model()] {
        return Err(Error::dim("fuse", format!("S {:?} is not [{}, {}]", s.shape(), c.nodes, c.d_model())));
    }
    let mut g = Graph::new();
    let pv = register_params(&mut g, state);
    let sv = g.leaf(s.clone().with_requires_grad(false));
    let (fused, mut att) = build_fusion(&mut g, state, &pv, sv, 1)?;
    Ok((g.tensor(fused).with_requires_grad(false), att.remove(0)))
}

/// Classifier head on one flattened embedding: (logits, probabilities).
pub fn classify<R: Rng + ?Sized>(state: &ModelState, s_a: &[f64], mode: Mode, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let flat = state.config.nodes * state.config.d_model();
    if s_a.len() != flat {
        return Err(Error::dim("classify", format!("embedding of length {} for expected {flat}", s_a.len())));
    }
    let mut g = Graph::new();
    let pv = register_params(&mut g, state);
    let x = g.constant(vec![1, flat], s_a.to_vec())?;
    let (logits, probs) = build_classifier(&mut g, state, &pv, x, mode, rng)?;
    Ok((g.value(logits).to_vec(), g.value(probs).to_vec()))
}

/// Single-sample forward. Dropout draws from `seed` in train mode; the
/// running statistics of `state` are left untouched.
pub fn forward(sample: &WindowSample, state: &ModelState, mode: Mode, seed: u64) -> Result<ModelOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fwd = forward_batch(state, &[sample], mode, &mut rng)?;
    Ok(fwd.outputs().remove(0))
}
