//! Flat `key = value` run configuration.
//!
//! Keys are dotted (`train.lr`), `#` starts a comment, unknown keys are
//! rejected. Every key has a default, and [`RunConfig::to_text`] prints the
//! fully resolved configuration in the same syntax so any run can be replayed
//! from its echo.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::comms::CompressionScheme;
use crate::error::{Error, Result};
use crate::learning::{HybridLossConfig, TrainConfig};
use crate::model::{ModelConfig, PoolChannels};
use crate::radar::{Geometry, RadarConfig, SynthConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,

    /// Dataset file read by every command except `generate`.
    pub data_path: Option<PathBuf>,
    pub participants: usize,
    pub samples_per_class: usize,
    pub window: usize,
    pub nodes: usize,
    pub fast_bins: usize,
    pub max_range: f64,
    pub noise_db: f64,
    pub radius: f64,
    pub imbalance: bool,

    pub pool: (usize, usize),
    pub pool_channels: PoolChannels,
    pub heads: usize,
    pub head_dim: usize,
    pub hidden: usize,
    pub dropout: f64,

    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_patience: usize,
    pub batch_size: usize,
    pub min_delta: f64,
    pub augment_scale: f64,
    /// Participant held out by `train`, `eval`, `compress`, `ablate` and `embed`.
    pub holdout: usize,

    pub gamma: f64,
    pub tau: f64,

    pub checkpoint: Option<PathBuf>,
    pub snr_db: Vec<f64>,
    pub repeats: usize,
    pub schemes: Vec<CompressionScheme>,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let loss = HybridLossConfig::default();
        let radius = match synth.geometry {
            Geometry::Disc { radius } => radius,
            Geometry::Anchored { .. } => 0.5,
        };
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            data_path: None,
            participants: synth.participants,
            samples_per_class: synth.samples_per_class,
            window: synth.window,
            nodes: synth.radar.nodes(),
            fast_bins: synth.radar.fast_bins,
            max_range: synth.radar.max_range(),
            noise_db: synth.radar.noise_db,
            radius,
            imbalance: synth.imbalance,
            pool: model.pool,
            pool_channels: model.pool_channels,
            heads: model.heads,
            head_dim: model.head_dim,
            hidden: model.hidden,
            dropout: model.dropout,
            lr: train.lr,
            max_epochs: train.max_epochs,
            patience: train.patience,
            lr_patience: train.lr_patience,
            batch_size: train.batch_size,
            min_delta: train.min_delta,
            augment_scale: train.augment_scale,
            holdout: 0,
            gamma: loss.gamma,
            tau: loss.tau,
            checkpoint: None,
            snr_db: vec![-10.0, 0.0, 10.0, 20.0, f64::INFINITY],
            repeats: 3,
            schemes: CompressionScheme::standard_set(),
            ablation_seeds: vec![1, 2, 3],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => parse(key, value),
    }
}

fn parse_list<T>(key: &str, value: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| item(key, s)).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key} needs at least one value")));
    }
    Ok(items)
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value.split_once('x').ok_or_else(|| Error::Config(format!("{key} = {value:?}: expected HxW")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_scheme(key: &str, value: &str) -> Result<CompressionScheme> {
    match value.split_once(':') {
        Some(("encoder", pool)) => Ok(CompressionScheme::Encoder { pool: parse_pair(key, pool)? }),
        Some(("downsample", ratio)) => Ok(CompressionScheme::Downsample { ratio: parse(key, ratio)? }),
        _ => Err(Error::Config(format!("{key}: {value:?} is not encoder:HxW or downsample:R"))),
    }
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data.path" => self.data_path = path(v),
            "data.participants" => self.participants = parse(key, v)?,
            "data.samples_per_class" => self.samples_per_class = parse(key, v)?,
            "data.window" => self.window = parse(key, v)?,
            "data.nodes" => self.nodes = parse(key, v)?,
            "data.fast_bins" => self.fast_bins = parse(key, v)?,
            "data.max_range" => self.max_range = parse_f64(key, v)?,
            "data.noise_db" => self.noise_db = parse_f64(key, v)?,
            "data.radius" => self.radius = parse_f64(key, v)?,
            "data.imbalance" => self.imbalance = parse(key, v)?,
            "model.pool" => self.pool = parse_pair(key, v)?,
            "model.pool_channels" => {
                self.pool_channels = match v {
                    "keep" => PoolChannels::Keep,
                    "average" => PoolChannels::Average,
                    _ => return Err(Error::Config(format!("{key}: {v:?} is not keep or average"))),
                }
            }
            "model.heads" => self.heads = parse(key, v)?,
            "model.head_dim" => self.head_dim = parse(key, v)?,
            "model.hidden" => self.hidden = parse(key, v)?,
            "model.dropout" => self.dropout = parse_f64(key, v)?,
            "train.lr" => self.lr = parse_f64(key, v)?,
            "train.max_epochs" => self.max_epochs = parse(key, v)?,
            "train.patience" => self.patience = parse(key, v)?,
            "train.lr_patience" => self.lr_patience = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.min_delta" => self.min_delta = parse_f64(key, v)?,
            "train.augment_scale" => self.augment_scale = parse_f64(key, v)?,
            "train.holdout" => self.holdout = parse(key, v)?,
            "loss.gamma" => self.gamma = parse_f64(key, v)?,
            "loss.tau" => self.tau = parse_f64(key, v)?,
            "eval.checkpoint" => self.checkpoint = path(v),
            "compress.snr_db" => self.snr_db = parse_list(key, v, parse_f64)?,
            "compress.repeats" => self.repeats = parse(key, v)?,
            "compress.schemes" => self.schemes = parse_list(key, v, parse_scheme)?,
            "ablate.seeds" => self.ablation_seeds = parse_list(key, v, parse)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a whole file's worth of settings on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_text(&text)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let pool_channels = match self.pool_channels {
            PoolChannels::Keep => "keep",
            PoolChannels::Average => "average",
        };
        let scheme = |s: &CompressionScheme| match s {
            CompressionScheme::Encoder { pool } => format!("encoder:{}x{}", pool.0, pool.1),
            CompressionScheme::Downsample { ratio } => format!("downsample:{ratio}"),
        };
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("data.path", opt(&self.data_path)),
            ("data.participants", self.participants.to_string()),
            ("data.samples_per_class", self.samples_per_class.to_string()),
            ("data.window", self.window.to_string()),
            ("data.nodes", self.nodes.to_string()),
            ("data.fast_bins", self.fast_bins.to_string()),
            ("data.max_range", fmt_f64(self.max_range)),
            ("data.noise_db", fmt_f64(self.noise_db)),
            ("data.radius", fmt_f64(self.radius)),
            ("data.imbalance", self.imbalance.to_string()),
            ("model.pool", format!("{}x{}", self.pool.0, self.pool.1)),
            ("model.pool_channels", pool_channels.into()),
            ("model.heads", self.heads.to_string()),
            ("model.head_dim", self.head_dim.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.dropout", fmt_f64(self.dropout)),
            ("train.lr", fmt_f64(self.lr)),
            ("train.max_epochs", self.max_epochs.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.lr_patience", self.lr_patience.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.min_delta", fmt_f64(self.min_delta)),
            ("train.augment_scale", fmt_f64(self.augment_scale)),
            ("train.holdout", self.holdout.to_string()),
            ("loss.gamma", fmt_f64(self.gamma)),
            ("loss.tau", fmt_f64(self.tau)),
            ("eval.checkpoint", opt(&self.checkpoint)),
            ("compress.snr_db", fmt_list(&self.snr_db, |v| fmt_f64(*v))),
            ("compress.repeats", self.repeats.to_string()),
            ("compress.schemes", fmt_list(&self.schemes, scheme)),
            ("ablate.seeds", fmt_list(&self.ablation_seeds, u64::to_string)),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn radar(&self) -> RadarConfig {
        RadarConfig { noise_db: self.noise_db, ..RadarConfig::with_range(self.fast_bins, self.max_range, self.nodes) }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            radar: self.radar(),
            participants: self.participants,
            samples_per_class: self.samples_per_class,
            window: self.window,
            imbalance: self.imbalance,
            geometry: Geometry::Disc { radius: self.radius },
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    /// Model hyper-parameters for input extents `(nodes, fast_bins, window)`.
    pub fn model(&self, nodes: usize, fast_bins: usize, window: usize) -> ModelConfig {
        ModelConfig {
            nodes,
            fast_bins,
            window,
            pool: self.pool,
            pool_channels: self.pool_channels,
            heads: self.heads,
            head_dim: self.head_dim,
            hidden: self.hidden,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }

    /// Noise augmentation is switched on together with class imbalance.
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr_patience: self.lr_patience,
            batch_size: self.batch_size,
            min_delta: self.min_delta,
            augment: self.imbalance,
            augment_scale: self.augment_scale,
            target_train_accuracy: None,
            seed: self.seed,
        }
    }

    pub fn loss(&self) -> HybridLossConfig {
        HybridLossConfig { gamma: self.gamma, tau: self.tau }
    }
}
