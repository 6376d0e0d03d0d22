//! Multi-node UWB radar data: synthetic echoes, polar windows, splits and
//! the on-disk recording format.

mod dataset;
mod motion;
mod recording;
mod signal;

pub use dataset::{
    augment, lopo_split, lopo_splits, synthesize_dataset, synthesize_recording, DatasetSplit, Geometry,
    SynthConfig, IMBALANCE_WEIGHTS,
};
pub use motion::{Activity, Motion, MotionProfile};
pub use recording::{load_recording, read_recording, save_recording, write_recording, Recording, WindowLabel};
pub use signal::generate_frame;

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radar front-end parameters shared by all nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    /// ω_c in rad/s.
    pub carrier_angular_frequency: f64,
    /// Pulse repetition interval T in seconds.
    pub pri: f64,
    /// Fast-time sampling period T_s in seconds.
    pub fast_sampling_period: f64,
    /// σ_p of the Gaussian pulse envelope, seconds.
    pub pulse_width: f64,
    pub fast_bins: usize,
    /// Node positions in metres.
    pub node_positions: Vec<[f64; 2]>,
    /// Complex measurement-noise power in dB relative to the echo peak power of
    /// a unit-reflectivity target at `noise_reference_range`. `-inf` disables noise.
    pub noise_db: f64,
    /// Metres; defaults to the node distance from the array centre, so a
    /// centred target sees the nominal SNR and nearer/farther nodes deviate.
    pub noise_reference_range: f64,
}

impl Default for RadarConfig {
    /// Five nodes, 480 fast-time bins spanning 9.6 m.
    fn default() -> Self {
        Self::with_range(480, 9.6, 5)
    }
}

impl RadarConfig {
    /// Nodes on a regular polygon of radius 3 m around the origin; the fast-time
    /// axis covers `max_range` metres in `fast_bins` bins.
    pub fn with_range(fast_bins: usize, max_range: f64, nodes: usize) -> Self {
        let ts = 2.0 * max_range / (SPEED_OF_LIGHT * fast_bins as f64);
        RadarConfig {
            carrier_angular_frequency: 2.0 * PI * 7.29e9,
            pri: 0.05,
            fast_sampling_period: ts,
            pulse_width: 1.5 * ts,
            fast_bins,
            node_positions: polygon(nodes, 3.0),
            noise_db: -30.0,
            noise_reference_range: 3.0,
        }
    }

    /// Reduced fast-time resolution for single-core experiments: 32 bins over 7.2 m.
    pub fn desk() -> Self {
        Self::with_range(32, 7.2, 5)
    }

    pub fn nodes(&self) -> usize {
        self.node_positions.len()
    }

    /// F·T_s·c/2.
    pub fn max_range(&self) -> f64 {
        self.fast_bins as f64 * self.fast_sampling_period * SPEED_OF_LIGHT / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.fast_bins == 0 {
            return Err(Error::Config("fast_bins must be at least 1".into()));
        }
        if !(self.fast_sampling_period > 0.0) || !(self.pri > 0.0) || !(self.pulse_width > 0.0) || !(self.noise_reference_range > 0.0) {
            return Err(Error::Config("sampling period, PRI, pulse width and noise reference range must be positive".into()));
        }
        if self.node_positions.is_empty() {
            return Err(Error::Config("at least one radar node is required".into()));
        }
        Ok(())
    }
}

fn polygon(n: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = PI / 2.0 + 2.0 * PI * i as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Complex fast-time × slow-time matrix of one node, row-major `[F, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexFrame {
    pub node: usize,
    pub fast: usize,
    pub slow: usize,
    pub data: Vec<Complex32>,
}

impl ComplexFrame {
    pub fn new(node: usize, fast: usize, slow: usize, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != fast * slow {
            return Err(Error::dim("frame", format!("{fast}x{slow} frame with {} samples", data.len())));
        }
        Ok(ComplexFrame { node, fast, slow, data })
    }

    pub fn at(&self, n: usize, m: usize) -> Complex32 {
        self.data[n * self.slow + m]
    }
}

/// One training example: a polar `[F, W, 2]` window per node.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub nodes: Vec<Tensor>,
    pub label: usize,
    pub participant: usize,
}

impl WindowSample {
    pub fn fast_bins(&self) -> usize {
        self.nodes.first().map_or(0, |t| t.shape()[0])
    }

    pub fn window(&self) -> usize {
        self.nodes.first().map_or(0, |t| t.shape()[1])
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(p: f64) -> f64 {
    let mut x = (p + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

fn polar(z: Complex32) -> (f64, f64) {
    let z = Complex64::new(z.re as f64, z.im as f64);
    let mut phase = z.im.atan2(z.re);
    if phase <= -PI {
        phase += 2.0 * PI;
    }
    (z.norm(), phase)
}

/// Cuts slow-time columns `start..start+len` of every node and converts them
/// to (magnitude, phase) channels.
pub fn to_window(frames: &[ComplexFrame], start: usize, len: usize, label: usize, participant: usize) -> Result<WindowSample> {
    let mut nodes = Vec::with_capacity(frames.len());
    for f in frames {
        if start + len > f.slow || len == 0 {
            return Err(Error::Bounds(format!(
                "window {start}..{} exceeds node {} frame of {} pulses",
                start + len,
                f.node,
                f.slow
            )));
        }
        let mut data = Vec::with_capacity(f.fast * len * 2);
        for n in 0..f.fast {
            for m in start..start + len {
                let (mag, phase) = polar(f.at(n, m));
                data.push(mag);
                data.push(phase);
            }
        }
        nodes.push(Tensor::new(vec![f.fast, len, 2], data)?);
    }
    Ok(WindowSample { nodes, label, participant })
}
