//! Leave-one-participant-out cross-validation on the desk-scale dataset.
//! With 8 samples per class the run takes several minutes on one core.
//!
//! ```text
//! cargo run --release --example lopo -- [samples_per_class] [seed]
//! ```

use std::time::Instant;

use radar_har::learning::{lopo_run, HybridLossConfig, TrainConfig};
use radar_har::model::ModelConfig;
use radar_har::radar::{synthesize_dataset, SynthConfig};

fn main() -> radar_har::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer argument"));
    let per_class = args.next().unwrap_or(8) as usize;
    let seed = args.next().unwrap_or(1);

    let synth = SynthConfig { samples_per_class: per_class, seed, ..SynthConfig::desk() };
    let samples = synthesize_dataset(&synth)?;
    let model = ModelConfig { fast_bins: synth.radar.fast_bins, window: synth.window, ..ModelConfig::default() };
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let start = Instant::now();
    let summary = lopo_run(&samples, &model, &cfg, &HybridLossConfig::default(), |_, r| {
        let acc = r.test.as_ref().map_or(f64::NAN, |t| t.accuracy);
        println!("participant {:?}: {:>3} epochs, accuracy {acc:.4}  [{:.0?}]", r.held_out, r.epochs_run, start.elapsed());
        Ok(())
    })?;
    println!("max {:.4}  mean {:.4}", summary.max_accuracy, summary.mean_accuracy);
    Ok(())
}
