//! The three-block recognition network: a weight-shared per-node CNN
//! encoder, multi-head self-attention fusion across nodes with a residual
//! connection, and a two-layer classifier.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{
    argmax, classify, encode_node, forward, forward_batch, forward_from_features, fuse, node_features, AttentionMatrix, Forward,
    ModelOutput,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{BnStats, Tensor};

/// Input channels (magnitude, phase).
pub const INPUT_CHANNELS: usize = 2;
/// Output channels of the three 3-layer conv stack and of the 1×1 conv.
pub const CONV_CHANNELS: [usize; 3] = [6, 8, 6];
pub const ENCODER_DEPTH: usize = 6;
const CONV_KERNELS: [(usize, usize); 3] = [(7, 3), (3, 3), (3, 3)];
const CONV_PADDING: [(usize, usize); 3] = [(3, 1), (1, 1), (1, 1)];

/// How the pooled encoder map is flattened into the node feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolChannels {
    /// Flatten all channels: d_model = 6·oh·ow.
    Keep,
    /// Average the channels first: d_model = oh·ow.
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub fast_bins: usize,
    pub window: usize,
    pub pool: (usize, usize),
    pub pool_channels: PoolChannels,
    pub heads: usize,
    /// d_k = d_v.
    pub head_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nodes: 5,
            fast_bins: 480,
            window: 30,
            pool: (5, 4),
            pool_channels: PoolChannels::Keep,
            heads: 4,
            head_dim: 24,
            hidden: 64,
            dropout: 0.3,
            classes: 9,
        }
    }
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        let depth = match self.pool_channels {
            PoolChannels::Keep => ENCODER_DEPTH,
            PoolChannels::Average => 1,
        };
        depth * self.pool.0 * self.pool.1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nodes == 0 || self.classes == 0 || self.heads == 0 || self.head_dim == 0 || self.hidden == 0 {
            return bad("nodes, classes, heads, head_dim and hidden must be positive".into());
        }
        if self.pool.0 == 0 || self.pool.1 == 0 || self.pool.0 > self.fast_bins || self.pool.1 > self.window {
            return bad(format!("pool target {:?} does not fit a {}x{} window", self.pool, self.fast_bins, self.window));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Positions of each parameter in the schema order.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub conv: [usize; 3],
    pub bn_gamma: [usize; 3],
    pub bn_beta: [usize; 3],
    pub conv1x1_weight: usize,
    pub conv1x1_bias: usize,
    /// (W_Q, W_K, W_V) per head.
    pub heads: Vec<(usize, usize, usize)>,
    pub out_weight: usize,
    pub out_bias: usize,
    pub dense1_weight: usize,
    pub dense1_bias: usize,
    pub dense2_weight: usize,
    pub dense2_bias: usize,
}

impl Layout {
    fn new(heads: usize) -> Self {
        let base = 11;
        let f = base + 3 * heads;
        Layout {
            conv: [0, 3, 6],
            bn_gamma: [1, 4, 7],
            bn_beta: [2, 5, 8],
            conv1x1_weight: 9,
            conv1x1_bias: 10,
            heads: (0..heads).map(|h| (base + 3 * h, base + 3 * h + 1, base + 3 * h + 2)).collect(),
            out_weight: f,
            out_bias: f + 1,
            dense1_weight: f + 2,
            dense1_bias: f + 3,
            dense2_weight: f + 4,
            dense2_bias: f + 5,
        }
    }
}

/// Fixed schema: (name, shape, fan-in for init; 0 = batch-norm scale, 1 = batch-norm shift).
pub(crate) fn schema(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let mut s = Vec::new();
    let mut c_in = INPUT_CHANNELS;
    for (i, (&c_out, &(kh, kw))) in CONV_CHANNELS.iter().zip(&CONV_KERNELS).enumerate() {
        s.push((format!("encoder.conv{}.weight", i + 1), vec![c_out, c_in, kh, kw], c_in * kh * kw));
        s.push((format!("encoder.bn{}.gamma", i + 1), vec![c_out], 0));
        s.push((format!("encoder.bn{}.beta", i + 1), vec![c_out], 1));
        c_in = c_out;
    }
    s.push(("encoder.conv1x1.weight".into(), vec![ENCODER_DEPTH, c_in, 1, 1], c_in));
    s.push(("encoder.conv1x1.bias".into(), vec![ENCODER_DEPTH], c_in));
    let d = cfg.d_model();
    for h in 0..cfg.heads {
        for kind in ["query", "key", "value"] {
            s.push((format!("fusion.head{h}.{kind}"), vec![d, cfg.head_dim], d));
        }
    }
    let concat = cfg.heads * cfg.head_dim;
    s.push(("fusion.out.weight".into(), vec![concat, d], concat));
    s.push(("fusion.out.bias".into(), vec![d], concat));
    let flat = cfg.nodes * d;
    s.push(("classifier.dense1.weight".into(), vec![flat, cfg.hidden], flat));
    s.push(("classifier.dense1.bias".into(), vec![cfg.hidden], flat));
    s.push(("classifier.dense2.weight".into(), vec![cfg.hidden, cfg.classes], cfg.hidden));
    s.push(("classifier.dense2.bias".into(), vec![cfg.classes], cfg.hidden));
    s
}

pub(crate) fn conv_geometry(layer: usize) -> ((usize, usize), (usize, usize)) {
    (CONV_KERNELS[layer], CONV_PADDING[layer])
}

/// All learnable parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub bn: [BnStats; 3],
}

impl ModelState {
    /// Uniform(±1/√fan_in) weights and biases; batch norm starts at γ=1, β=0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, &[0x1417]);
        let params = schema(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let n: usize = shape.iter().product();
                let data = match fan_in {
                    0 => vec![1.0; n],
                    1 => vec![0.0; n],
                    f => {
                        let bound = 1.0 / (f as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                };
                Param { name, tensor: Tensor::new(shape, data).expect("schema shapes") }
            })
            .collect();
        Ok(Self::from_parts(config, params))
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<Param>) -> Self {
        let bn = CONV_CHANNELS.map(BnStats::new);
        ModelState { config, params, bn }
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.config.heads)
    }

    /// Number of learnable scalars; running statistics are not counted.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    /// Rounds every stored value to single precision, matching what a
    /// checkpoint round trip yields.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for s in &mut self.bn {
            s.mean.iter_mut().chain(s.var.iter_mut()).for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Table-style breakdown used by the CLI.
pub fn parameter_breakdown(state: &ModelState) -> Vec<(String, usize)> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for p in &state.params {
        let group = p.name.split('.').next().unwrap_or("").to_string();
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, n)) => *n += p.tensor.numel(),
            None => groups.push((group, p.tensor.numel())),
        }
    }
    groups
}
