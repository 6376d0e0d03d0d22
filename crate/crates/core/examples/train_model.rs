//! Trains on four synthetic participants, tests on the fifth and saves the
//! checkpoint.
//!
//! ```text
//! cargo run --release --example train_model -- [samples_per_class] [seed]
//! ```

use radar_har::learning::{evaluate, train, HybridLossConfig, TrainConfig};
use radar_har::model::{load_checkpoint, parameter_breakdown, save_checkpoint, ModelConfig};
use radar_har::radar::{lopo_split, synthesize_dataset, Activity, SynthConfig, WindowSample};

fn main() -> radar_har::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer argument"));
    let per_class = args.next().unwrap_or(4) as usize;
    let seed = args.next().unwrap_or(0);

    let synth = SynthConfig { samples_per_class: per_class, seed, ..SynthConfig::desk() };
    let samples = synthesize_dataset(&synth)?;
    let split = lopo_split(&samples, 4, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<WindowSample>>();
    let model = ModelConfig { fast_bins: synth.radar.fast_bins, window: synth.window, ..ModelConfig::default() };
    let cfg = TrainConfig { seed, ..TrainConfig::default() };

    let (state, report) = train(&pick(&split.train), &pick(&split.validation), &model, &cfg, &HybridLossConfig::default())?;
    for (group, n) in parameter_breakdown(&state) {
        println!("{group:<12}{n:>8}");
    }
    println!("{:<12}{:>8}", "total", state.parameter_count());
    for e in &report.epochs {
        println!(
            "epoch {:>3}  lr {:.1e}  train {:.4} ({:.3})  val {:.4} ({:.3})",
            e.epoch, e.lr, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        );
    }
    println!("best epoch {} (validation loss {:.4})", report.best_epoch, report.best_val_loss);

    let test = evaluate(&state, &pick(&split.test))?;
    println!("held-out participant 4: accuracy {:.4}", test.accuracy);
    for (activity, row) in Activity::ALL.iter().zip(&test.counts) {
        println!("  {:<24} {row:?}", format!("{activity:?}"));
    }

    let path = std::env::temp_dir().join("radar-har-example.rfm");
    save_checkpoint(&state, &path)?;
    let reloaded = evaluate(&load_checkpoint(&path)?, &pick(&split.test))?;
    assert_eq!(reloaded.accuracy, test.accuracy);
    println!("checkpoint {} reproduces the accuracy", path.display());
    Ok(())
}
