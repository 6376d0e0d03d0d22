//! Trains on a scenario where activities happen close to node 0, then relates
//! each node's attention importance to the accuracy lost when it is ablated.
//!
//! ```text
//! cargo run --release --example node_importance -- [seed]
//! ```

use radar_har::interpret::{importance_ablation_study, AblationMode};
use radar_har::learning::{train, HybridLossConfig, TrainConfig};
use radar_har::model::ModelConfig;
use radar_har::radar::{lopo_split, synthesize_dataset, SynthConfig, WindowSample};

fn main() -> radar_har::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let synth = SynthConfig { seed, ..SynthConfig::near_node(0) };
    let samples = synthesize_dataset(&synth)?;
    let split = lopo_split(&samples, 0, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<WindowSample>>();
    let model = ModelConfig { fast_bins: synth.radar.fast_bins, window: synth.window, ..ModelConfig::default() };
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let (state, _) = train(&pick(&split.train), &pick(&split.validation), &model, &cfg, &HybridLossConfig::default())?;

    let study = importance_ablation_study(&state, &pick(&split.test), &[1, 2, 3])?;
    println!("baseline accuracy {:.4}", study.baseline_accuracy);
    let zero = study.drops(AblationMode::Zeros);
    let random = study.drops(AblationMode::Random);
    println!("node  importance  argmax  drop(zeros)  drop(random)");
    for n in 0..model.nodes {
        println!(
            "{n:>4}  {:>10.4}  {:>6}  {:>11.4}  {:>12.4}",
            study.importance.mean[n], study.importance.argmax_counts[n], zero[n], random[n]
        );
    }
    println!("spearman: zeros {:.3}, random {:.3}", study.spearman_zero, study.spearman_random);
    study.write_csv(std::io::stdout())
}
