use num_complex::{Complex32, Complex64};
use rand_distr::{Distribution, StandardNormal};

use super::{ComplexFrame, MotionProfile, RadarConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::seed;

/// Simulates the baseband echo matrix of one node:
///
/// `y[n,m] = α(m)·p(n·T_s − t_D(m))·exp(j·ω_c·t_D(m)) + w[n,m]`
///
/// with `t_D = 2r/c`, `α = reflectivity/r²`, a Gaussian envelope
/// `p(t) = exp(−t²/2σ_p²)` and complex white noise `w`.
pub fn generate_frame(cfg: &RadarConfig, profile: &MotionProfile, node: usize, pulses: usize, seed: u64) -> Result<ComplexFrame> {
    cfg.validate()?;
    if pulses == 0 {
        return Err(Error::Config("a frame needs at least one pulse".into()));
    }
    let position = *cfg
        .node_positions
        .get(node)
        .ok_or_else(|| Error::Bounds(format!("node {node} of {}", cfg.nodes())))?;
    let max_range = cfg.max_range();
    let f = cfg.fast_bins;
    let noise_sigma = if cfg.noise_db.is_finite() {
        let peak = 1.0 / cfg.noise_reference_range.powi(2);
        (10f64.powf(cfg.noise_db / 10.0) / 2.0).sqrt() * peak
    } else {
        0.0
    };
    let mut rng = seed::rng(seed, &[node as u64]);
    let inv_two_var = 1.0 / (2.0 * cfg.pulse_width * cfg.pulse_width);

    let mut data = vec![Complex32::new(0.0, 0.0); f * pulses];
    for m in 0..pulses {
        let t = m as f64 * cfg.pri;
        let r = profile.range(position, t);
        if !(r > 0.0 && r < max_range) || !r.is_finite() {
            return Err(Error::RangeOverflow { range: r, max: max_range });
        }
        let delay = 2.0 * r / SPEED_OF_LIGHT;
        let alpha = profile.reflectivity(t) / (r * r);
        let carrier = Complex64::from_polar(alpha, cfg.carrier_angular_frequency * delay);
        for n in 0..f {
            let dt = n as f64 * cfg.fast_sampling_period - delay;
            let mut y = carrier * (-dt * dt * inv_two_var).exp();
            if noise_sigma > 0.0 {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                y += Complex64::new(re, im) * noise_sigma;
            }
            data[n * pulses + m] = Complex32::new(y.re as f32, y.im as f32);
        }
    }
    ComplexFrame::new(node, f, pulses, data)
}
