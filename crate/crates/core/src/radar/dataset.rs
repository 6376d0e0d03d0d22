use std::f64::consts::PI;

use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::recording::{Recording, WindowLabel};
use super::{generate_frame, wrap_phase, Activity, ComplexFrame, MotionProfile, RadarConfig, WindowSample};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Class shares of the public recording set, walking first (percent).
pub const IMBALANCE_WEIGHTS: [f64; 9] = [29.7, 14.8, 5.1, 4.7, 11.8, 12.9, 3.3, 11.6, 5.3];

/// Where targets are placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Uniform in a disc of the given radius around the origin.
    Disc { radius: f64 },
    /// Gaussian scatter (std `jitter`) around a fixed point.
    Anchored { point: [f64; 2], jitter: f64 },
}

impl Geometry {
    /// Anchor `fraction` of the way from the origin to `node`, offset
    /// `lateral` metres perpendicular to that axis.
    pub fn near_node(cfg: &RadarConfig, node: usize, fraction: f64, lateral: f64, jitter: f64) -> Self {
        let p = cfg.node_positions[node];
        let norm = (p[0] * p[0] + p[1] * p[1]).sqrt().max(1e-9);
        let perp = [-p[1] / norm, p[0] / norm];
        Geometry::Anchored {
            point: [p[0] * fraction + perp[0] * lateral, p[1] * fraction + perp[1] * lateral],
            jitter,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        match *self {
            Geometry::Disc { radius } => {
                let r = radius * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..2.0 * PI);
                [r * a.cos(), r * a.sin()]
            }
            Geometry::Anchored { point, jitter } => {
                let n = Normal::new(0.0, jitter.max(0.0)).expect("finite jitter");
                [point[0] + n.sample(rng), point[1] + n.sample(rng)]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub radar: RadarConfig,
    pub classes: usize,
    pub participants: usize,
    pub samples_per_class: usize,
    /// Slow-time window length W.
    pub window: usize,
    /// Draw per-participant class counts from [`IMBALANCE_WEIGHTS`].
    pub imbalance: bool,
    pub geometry: Geometry,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            radar: RadarConfig::default(),
            classes: 9,
            participants: 5,
            samples_per_class: 4,
            window: 30,
            imbalance: false,
            geometry: Geometry::Disc { radius: 0.5 },
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// [`RadarConfig::desk`] with the default window.
    pub fn desk() -> Self {
        SynthConfig { radar: RadarConfig::desk(), ..Self::default() }
    }

    /// Targets clustered off-axis near `node` under strong measurement noise:
    /// node distances are all distinct, so their signal quality is graded.
    pub fn near_node(node: usize) -> Self {
        let mut radar = RadarConfig::desk();
        radar.noise_db = 0.0;
        let geometry = Geometry::near_node(&radar, node, 0.6, 0.6, 0.2);
        SynthConfig { radar, geometry, samples_per_class: 8, ..Self::default() }
    }

    /// Per-participant count of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        if !self.imbalance {
            return vec![self.samples_per_class; self.classes];
        }
        let total = self.samples_per_class * self.classes;
        let weights: Vec<f64> = (0..self.classes).map(|c| IMBALANCE_WEIGHTS.get(c).copied().unwrap_or(1.0)).collect();
        largest_remainder(&weights, total)
    }
}

fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Participant-level variation of an activity's execution.
struct Style {
    amplitude: f64,
    timing: f64,
    alpha0: f64,
}

fn participant_style(seed: u64, participant: usize) -> Style {
    let mut rng = seed::rng(seed, &[0xA11CE, participant as u64]);
    Style {
        amplitude: rng.gen_range(0.8..1.2),
        timing: rng.gen_range(0.9..1.1),
        alpha0: rng.gen_range(0.8..1.2),
    }
}

/// Builds the contiguous multi-node recording behind a synthetic dataset:
/// every window is an independent W-pulse capture appended along slow time.
pub fn synthesize_recording(cfg: &SynthConfig) -> Result<Recording> {
    cfg.radar.validate()?;
    if cfg.samples_per_class == 0 || cfg.window == 0 || cfg.participants == 0 {
        return Err(Error::Config("need at least one participant, one sample per class and W >= 1".into()));
    }
    if cfg.classes == 0 || cfg.classes > Activity::ALL.len() {
        return Err(Error::Config(format!("class count {} outside 1..=9", cfg.classes)));
    }
    let counts = cfg.class_counts();
    let nodes = cfg.radar.nodes();
    let duration = cfg.window as f64 * cfg.radar.pri;
    let mut chunks: Vec<Vec<ComplexFrame>> = Vec::new();
    let mut windows = Vec::new();
    for p in 0..cfg.participants {
        let style = participant_style(cfg.seed, p);
        for (class, &count) in counts.iter().enumerate() {
            let activity = Activity::from_class(class).expect("class checked above");
            for s in 0..count {
                let mut rng = seed::rng(cfg.seed, &[p as u64, class as u64, s as u64]);
                let start = cfg.geometry.sample(&mut rng);
                let heading = rng.gen_range(0.0..2.0 * PI);
                let mut profile = MotionProfile::activity(activity, start, heading, duration);
                profile.amplitude = style.amplitude * rng.gen_range(0.95..1.05);
                profile.timing = style.timing;
                profile.shift = rng.gen_range(-0.05..0.05);
                profile.micro_phase = rng.gen_range(0.0..2.0 * PI);
                profile.alpha0 = style.alpha0;
                let noise_seed = rng.gen::<u64>();
                let frames = (0..nodes)
                    .map(|n| generate_frame(&cfg.radar, &profile, n, cfg.window, noise_seed))
                    .collect::<Result<Vec<_>>>()?;
                windows.push(WindowLabel {
                    start: (chunks.len() * cfg.window) as u32,
                    length: cfg.window as u32,
                    class: class as u32,
                    participant: p as u32,
                });
                chunks.push(frames);
            }
        }
    }
    let total = chunks.len() * cfg.window;
    let fast = cfg.radar.fast_bins;
    let frames = (0..nodes)
        .map(|node| {
            let mut data = vec![Complex32::new(0.0, 0.0); fast * total];
            for (c, chunk) in chunks.iter().enumerate() {
                let src = &chunk[node];
                for n in 0..fast {
                    let dst = n * total + c * cfg.window;
                    data[dst..dst + cfg.window].copy_from_slice(&src.data[n * cfg.window..(n + 1) * cfg.window]);
                }
            }
            ComplexFrame::new(node, fast, total, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Recording { frames, windows, participants: cfg.participants })
}

pub fn synthesize_dataset(cfg: &SynthConfig) -> Result<Vec<WindowSample>> {
    synthesize_recording(cfg)?.samples()
}

/// Adds zero-mean Gaussian noise with std `scale` × the per-node, per-channel
/// std of the window. Magnitudes are clamped at zero and phases re-wrapped.
pub fn augment(sample: &WindowSample, scale: f64, seed: u64) -> WindowSample {
    if scale <= 0.0 {
        return sample.clone();
    }
    let mut rng = seed::rng(seed, &[0xA06]);
    let nodes = sample
        .nodes
        .iter()
        .map(|t| {
            let mut data = t.data().to_vec();
            for ch in 0..2 {
                let vals = data.iter().skip(ch).step_by(2);
                let n = vals.clone().count() as f64;
                let mean = vals.clone().sum::<f64>() / n;
                let std = (vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if std == 0.0 {
                    continue;
                }
                let noise = Normal::new(0.0, scale * std).expect("finite std");
                for v in data.iter_mut().skip(ch).step_by(2) {
                    let x = *v + noise.sample(&mut rng);
                    *v = if ch == 0 { x.max(0.0) } else { wrap_phase(x) };
                }
            }
            Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
        })
        .collect();
    WindowSample { nodes, label: sample.label, participant: sample.participant }
}

/// Sample indices of one leave-one-participant-out fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub held_out: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Holds `participant` out as test data and splits the rest 4:1 into
/// train/validation, stratified by class.
pub fn lopo_split(samples: &[WindowSample], participant: usize, seed: u64) -> Result<DatasetSplit> {
    let mut participants: Vec<usize> = samples.iter().map(|s| s.participant).collect();
    participants.sort_unstable();
    participants.dedup();
    if participants.len() < 2 {
        return Err(Error::Split(format!("need at least two participants, found {}", participants.len())));
    }
    if !participants.contains(&participant) {
        return Err(Error::Split(format!("participant {participant} has no samples")));
    }
    let test: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].participant == participant).collect();
    let mut classes: Vec<usize> = samples.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for class in classes {
        let mut idx: Vec<usize> =
            (0..samples.len()).filter(|&i| samples[i].participant != participant && samples[i].label == class).collect();
        let mut rng = seed::rng(seed, &[0x5B1, participant as u64, class as u64]);
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 / 5.0).round() as usize;
        validation.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(DatasetSplit { held_out: participant, train, validation, test })
}

/// One split per participant, in ascending participant order.
pub fn lopo_splits(samples: &[WindowSample], seed: u64) -> Result<Vec<DatasetSplit>> {
    let mut participants: Vec<usize> = samples.iter().map(|s| s.participant).collect();
    participants.sort_unstable();
    participants.dedup();
    if participants.len() < 2 {
        return Err(Error::Split(format!("need at least two participants, found {}", participants.len())));
    }
    participants.into_iter().map(|p| lopo_split(samples, p, seed)).collect()
}
