//! Transmission study: nodes either send compact encoder features or
//! fast-time-decimated raw windows over an AWGN channel, and the fusion
//! processor classifies whatever arrives.

use std::fmt;
use std::io::Write;

use num_rational::Ratio;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{train, HybridLossConfig, TrainConfig, TrainReport};
use crate::model::{encode_node, forward_batch, forward_from_features, ModelConfig, ModelOutput, ModelState, PoolChannels, ENCODER_DEPTH};
use crate::radar::WindowSample;
use crate::seed;
use crate::tensor::{Mode, Tensor};

/// Encoder pool targets of the comparison, at the fixed channel depth.
pub const ENCODER_POOLS: [(usize, usize); 5] = [(5, 2), (5, 4), (5, 8), (10, 4), (10, 8)];
pub const DOWNSAMPLE_RATIOS: [usize; 4] = [2, 5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompressionScheme {
    /// Send the pooled encoder feature (depth 6 × oh × ow values).
    Encoder { pool: (usize, usize) },
    /// Send every `ratio`-th fast-time bin of the polar window.
    Downsample { ratio: usize },
}

impl CompressionScheme {
    /// The five encoder schemes followed by the four downsampling ratios.
    pub fn standard_set() -> Vec<CompressionScheme> {
        ENCODER_POOLS
            .iter()
            .map(|&pool| CompressionScheme::Encoder { pool })
            .chain(DOWNSAMPLE_RATIOS.iter().map(|&ratio| CompressionScheme::Downsample { ratio }))
            .collect()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CompressionScheme::Encoder { .. } => "encoder",
            CompressionScheme::Downsample { .. } => "downsample",
        }
    }

    /// Pool target as `5x4`, or the ratio.
    pub fn setting(&self) -> String {
        match self {
            CompressionScheme::Encoder { pool } => format!("{}x{}", pool.0, pool.1),
            CompressionScheme::Downsample { ratio } => ratio.to_string(),
        }
    }

    pub fn validate(&self, fast_bins: usize, window: usize) -> Result<()> {
        match *self {
            CompressionScheme::Encoder { pool } if pool.0 == 0 || pool.1 == 0 || pool.0 > fast_bins || pool.1 > window => {
                Err(Error::Config(format!("pool target {pool:?} does not fit a {fast_bins}x{window} window")))
            }
            CompressionScheme::Downsample { ratio } if ratio == 0 || ratio > fast_bins => {
                Err(Error::Config(format!("downsample ratio {ratio} invalid for {fast_bins} fast bins")))
            }
            _ => Ok(()),
        }
    }

    /// Values each node puts on the channel per window.
    pub fn payload(&self, fast_bins: usize, window: usize) -> usize {
        match *self {
            CompressionScheme::Encoder { pool } => ENCODER_DEPTH * pool.0 * pool.1,
            CompressionScheme::Downsample { ratio } => (fast_bins / ratio) * window * 2,
        }
    }

    /// Raw window elements per transmitted element, exactly.
    pub fn compression_factor(&self, fast_bins: usize, window: usize) -> Result<Ratio<usize>> {
        self.validate(fast_bins, window)?;
        Ok(Ratio::new(fast_bins * window * 2, self.payload(fast_bins, window)))
    }
}

impl fmt::Display for CompressionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind(), self.setting())
    }
}

/// Downsampling ratio whose payload is closest to `target` (ties go to the
/// larger payload).
pub fn matched_ratio(target: usize, fast_bins: usize, window: usize, ratios: &[usize]) -> Option<usize> {
    ratios
        .iter()
        .copied()
        .filter(|&r| r >= 1 && r <= fast_bins)
        .min_by_key(|&r| {
            let p = CompressionScheme::Downsample { ratio: r }.payload(fast_bins, window);
            (p.abs_diff(target), usize::MAX - p)
        })
}

/// Additive white Gaussian noise at a per-payload SNR. `f64::INFINITY`
/// means a perfect channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        ChannelModel { snr_db, seed }
    }

    pub fn noiseless() -> Self {
        ChannelModel { snr_db: f64::INFINITY, seed: 0 }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    /// Independent channel for a sub-stream (a node, a sample).
    pub fn child(&self, path: &[u64]) -> Self {
        ChannelModel { snr_db: self.snr_db, seed: seed::derive(self.seed, path) }
    }
}

/// Adds noise of power (mean square of `payload`) / 10^(snr/10).
pub fn transmit(payload: &[f64], channel: &ChannelModel) -> Result<Vec<f64>> {
    if payload.is_empty() {
        return Err(Error::Contract("empty payload".into()));
    }
    if channel.snr_db.is_nan() || channel.snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("SNR {} dB is not usable", channel.snr_db)));
    }
    if channel.is_noiseless() {
        return Ok(payload.to_vec());
    }
    let power = payload.iter().map(|v| v * v).sum::<f64>() / payload.len() as f64;
    if power == 0.0 {
        return Err(Error::DegenerateSignal("zero-power payload cannot be referenced to an SNR".into()));
    }
    let sigma = (power / 10f64.powf(channel.snr_db / 10.0)).sqrt();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::NonFinite(format!("noise std {sigma}: {e}")))?;
    let mut rng = seed::rng(channel.seed, &[0xC4A]);
    Ok(payload.iter().map(|v| v + noise.sample(&mut rng)).collect())
}

fn check_encoder_scheme(state: &ModelState, scheme: &CompressionScheme) -> Result<()> {
    match *scheme {
        CompressionScheme::Encoder { pool } if pool == state.config.pool && state.config.pool_channels == PoolChannels::Keep => Ok(()),
        CompressionScheme::Encoder { pool } => Err(Error::Config(format!(
            "model encodes to pool {:?} ({:?} channels), scheme asks for {pool:?}",
            state.config.pool, state.config.pool_channels
        ))),
        other => Err(Error::Config(format!("{other} is not an encoder scheme"))),
    }
}

/// Each node encodes its window and sends the feature vector; the fusion
/// processor runs attention and the classifier on what it receives.
/// Node `n` uses channel `channel.child(&[n])`.
pub fn pipeline_encoder(sample: &WindowSample, state: &ModelState, scheme: &CompressionScheme, channel: &ChannelModel) -> Result<ModelOutput> {
    Ok(encoder_batch(&[sample], state, scheme, &[*channel])?.remove(0))
}

fn encoder_batch(samples: &[&WindowSample], state: &ModelState, scheme: &CompressionScheme, channels: &[ChannelModel]) -> Result<Vec<ModelOutput>> {
    check_encoder_scheme(state, scheme)?;
    let c = &state.config;
    let d = c.d_model();
    let mut received = Vec::with_capacity(samples.len() * c.nodes * d);
    for (sample, channel) in samples.iter().zip(channels) {
        if sample.nodes.len() != c.nodes {
            return Err(Error::dim("pipeline", format!("sample has {} nodes, model expects {}", sample.nodes.len(), c.nodes)));
        }
        for (n, window) in sample.nodes.iter().enumerate() {
            received.extend(transmit(&encode_node(state, window, Mode::Infer)?, &channel.child(&[n as u64]))?);
        }
    }
    let features = Tensor::new(vec![samples.len() * c.nodes, d], received)?;
    Ok(forward_from_features(state, features, Mode::Infer, &mut seed::rng(0, &[]))?.outputs())
}

/// Keeps fast-time bins 0, r, 2r, … (trailing bins that do not fill a
/// stride are dropped).
pub fn decimate(sample: &WindowSample, ratio: usize) -> Result<WindowSample> {
    let f = sample.fast_bins();
    if ratio == 0 || ratio > f {
        return Err(Error::Config(format!("downsample ratio {ratio} invalid for {f} fast bins")));
    }
    let kept = f / ratio;
    let w = sample.window();
    let nodes = sample
        .nodes
        .iter()
        .map(|t| {
            let row = w * 2;
            let data = (0..kept).flat_map(|i| t.data()[i * ratio * row..(i * ratio + 1) * row].iter().copied()).collect();
            Tensor::new(vec![kept, w, 2], data)
        })
        .collect::<Result<_>>()?;
    Ok(WindowSample { nodes, label: sample.label, participant: sample.participant })
}

/// Model configuration for inputs decimated by `ratio`; the pool height is
/// capped at the remaining fast bins.
pub fn downsample_model_config(base: &ModelConfig, ratio: usize) -> ModelConfig {
    let fast_bins = base.fast_bins / ratio.max(1);
    ModelConfig { fast_bins, pool: (base.pool.0.min(fast_bins.max(1)), base.pool.1), ..base.clone() }
}

/// Each node decimates its polar window and sends it as-is; the fusion
/// processor runs the full model trained on decimated inputs.
pub fn pipeline_downsample(sample: &WindowSample, ratio: usize, state_ds: &ModelState, channel: &ChannelModel) -> Result<ModelOutput> {
    Ok(downsample_batch(&[sample], ratio, state_ds, &[*channel])?.remove(0))
}

fn downsample_batch(samples: &[&WindowSample], ratio: usize, state_ds: &ModelState, channels: &[ChannelModel]) -> Result<Vec<ModelOutput>> {
    let mut received = Vec::with_capacity(samples.len());
    for (sample, channel) in samples.iter().zip(channels) {
        let mut ds = decimate(sample, ratio)?;
        if ds.fast_bins() != state_ds.config.fast_bins {
            return Err(Error::Config(format!(
                "ratio {ratio} leaves {} fast bins but the model expects {}",
                ds.fast_bins(),
                state_ds.config.fast_bins
            )));
        }
        for (n, t) in ds.nodes.iter_mut().enumerate() {
            let noisy = transmit(t.data(), &channel.child(&[n as u64]))?;
            *t = Tensor::new(t.shape().to_vec(), noisy)?;
        }
        received.push(ds);
    }
    let refs: Vec<&WindowSample> = received.iter().collect();
    Ok(forward_batch(state_ds, &refs, Mode::Infer, &mut seed::rng(0, &[]))?.outputs())
}

/// Accuracy of `scheme` over `samples` through `channel`; sample `k` uses
/// `channel.child(&[k])`.
pub fn scheme_accuracy(samples: &[WindowSample], scheme: &CompressionScheme, state: &ModelState, channel: &ChannelModel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to transmit".into()));
    }
    let mut correct = 0;
    for (b, chunk) in samples.chunks(32).enumerate() {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let channels: Vec<ChannelModel> = (0..chunk.len()).map(|k| channel.child(&[(b * 32 + k) as u64])).collect();
        let outputs = match *scheme {
            CompressionScheme::Encoder { .. } => encoder_batch(&refs, state, scheme, &channels)?,
            CompressionScheme::Downsample { ratio } => downsample_batch(&refs, ratio, state, &channels)?,
        };
        correct += outputs.iter().zip(chunk).filter(|(o, s)| o.predicted() == s.label).count();
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    pub setting: String,
    pub compression_factor: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scheme: String,
    pub setting: String,
    pub compression_factor: f64,
    pub snr_db: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub repeats: usize,
}

/// Every (scheme, SNR, repeat) cell. Each scheme comes with the model that
/// serves it. Repeat `r` uses channel seed `derive(seed, [r])`.
pub fn snr_sweep(
    schemes: &[(CompressionScheme, &ModelState)],
    snrs: &[f64],
    samples: &[WindowSample],
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let (f, w) = samples.first().map(|s| (s.fast_bins(), s.window())).ok_or_else(|| Error::Config("empty sweep set".into()))?;
    let mut rows = Vec::new();
    for (scheme, state) in schemes {
        let cf = scheme.compression_factor(f, w)?;
        for &snr in snrs {
            for r in 0..repeats {
                let run_seed = seed::derive(seed, &[r as u64]);
                let accuracy = scheme_accuracy(samples, scheme, state, &ChannelModel::new(snr, run_seed))?;
                rows.push(SweepRow {
                    scheme: scheme.kind().into(),
                    setting: scheme.setting(),
                    compression_factor: *cf.numer() as f64 / *cf.denom() as f64,
                    snr_db: snr,
                    seed: run_seed,
                    accuracy,
                });
            }
        }
    }
    Ok(rows)
}

/// Mean and population std of accuracy per (scheme, setting, SNR), in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut out: Vec<(SweepSummary, Vec<f64>)> = Vec::new();
    for r in rows {
        let found = out.iter_mut().find(|(s, _)| s.scheme == r.scheme && s.setting == r.setting && s.snr_db == r.snr_db);
        match found {
            Some((_, acc)) => acc.push(r.accuracy),
            None => out.push((
                SweepSummary {
                    scheme: r.scheme.clone(),
                    setting: r.setting.clone(),
                    compression_factor: r.compression_factor,
                    snr_db: r.snr_db,
                    mean_accuracy: 0.0,
                    std_accuracy: 0.0,
                    repeats: 0,
                },
                vec![r.accuracy],
            )),
        }
    }
    out.into_iter()
        .map(|(mut s, acc)| {
            let n = acc.len() as f64;
            s.mean_accuracy = acc.iter().sum::<f64>() / n;
            s.std_accuracy = (acc.iter().map(|a| (a - s.mean_accuracy).powi(2)).sum::<f64>() / n).sqrt();
            s.repeats = acc.len();
            s
        })
        .collect()
}

fn snr_field(snr: f64) -> String {
    if snr == f64::INFINITY {
        "inf".into()
    } else {
        snr.to_string()
    }
}

/// Columns: scheme, pool/ratio, compression_factor, snr_db, seed, accuracy.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("writing sweep csv", e.into());
    w.write_record(["scheme", "pool/ratio", "compression_factor", "snr_db", "seed", "accuracy"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.setting.clone(),
            r.compression_factor.to_string(),
            snr_field(r.snr_db),
            r.seed.to_string(),
            r.accuracy.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("writing sweep csv", e))
}

pub fn write_summary_csv<W: Write>(rows: &[SweepSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("writing sweep summary csv", e.into());
    w.write_record(["scheme", "pool/ratio", "compression_factor", "snr_db", "mean_accuracy", "std_accuracy", "repeats"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.setting.clone(),
            r.compression_factor.to_string(),
            snr_field(r.snr_db),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.repeats.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("writing sweep summary csv", e))
}

/// Trains the model a scheme needs at the fusion processor: the encoder
/// schemes use `base` with their pool target, the downsampling schemes a
/// model over decimated windows.
pub fn train_for_scheme(
    scheme: &CompressionScheme,
    base: &ModelConfig,
    train_set: &[WindowSample],
    validation: &[WindowSample],
    cfg: &TrainConfig,
    loss: &HybridLossConfig,
) -> Result<(ModelState, TrainReport)> {
    scheme.validate(base.fast_bins, base.window)?;
    match *scheme {
        CompressionScheme::Encoder { pool } => {
            let model = ModelConfig { pool, pool_channels: PoolChannels::Keep, ..base.clone() };
            train(train_set, validation, &model, cfg, loss)
        }
        CompressionScheme::Downsample { ratio } => {
            let ds = |set: &[WindowSample]| set.iter().map(|s| decimate(s, ratio)).collect::<Result<Vec<_>>>();
            train(&ds(train_set)?, &ds(validation)?, &downsample_model_config(base, ratio), cfg, loss)
        }
    }
}
