//! Sends either encoder features or decimated raw frames through an AWGN
//! channel and compares accuracy at a matched payload.
//!
//! ```text
//! cargo run --release --example compression_sweep -- [seed]
//! ```

use radar_har::comms::{
    matched_ratio, snr_sweep, summarize, train_for_scheme, write_summary_csv, CompressionScheme, DOWNSAMPLE_RATIOS,
};
use radar_har::learning::{HybridLossConfig, TrainConfig};
use radar_har::model::ModelConfig;
use radar_har::radar::{lopo_split, synthesize_dataset, SynthConfig, WindowSample};

fn main() -> radar_har::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));

    println!("compression factors for 480x30 frames:");
    for scheme in CompressionScheme::standard_set() {
        println!("  {:<16} payload {:>6}  factor {}", scheme.to_string(), scheme.payload(480, 30), scheme.compression_factor(480, 30)?);
    }

    let synth = SynthConfig { seed, ..SynthConfig::desk() };
    let (f, w) = (synth.radar.fast_bins, synth.window);
    let samples = synthesize_dataset(&synth)?;
    let split = lopo_split(&samples, 0, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<WindowSample>>();
    let (train, val, test) = (pick(&split.train), pick(&split.validation), pick(&split.test));

    let base = ModelConfig { fast_bins: f, window: w, ..ModelConfig::default() };
    let encoder = CompressionScheme::Encoder { pool: base.pool };
    let ratio = matched_ratio(encoder.payload(f, w), f, w, &DOWNSAMPLE_RATIOS).expect("ratios are non-empty");
    let downsample = CompressionScheme::Downsample { ratio };
    println!("at {f}x{w}: {encoder} sends {} values per node, {downsample} sends {}", encoder.payload(f, w), downsample.payload(f, w));

    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let loss = HybridLossConfig::default();
    let (enc_state, _) = train_for_scheme(&encoder, &base, &train, &val, &cfg, &loss)?;
    let (ds_state, _) = train_for_scheme(&downsample, &base, &train, &val, &cfg, &loss)?;
    let rows = snr_sweep(&[(encoder, &enc_state), (downsample, &ds_state)], &[-10.0, 0.0, 10.0, 20.0, f64::INFINITY], &test, 3, seed)?;
    write_summary_csv(&summarize(&rows), std::io::stdout())
}
