//! Inspects the attention fusion block for one window of a briefly trained
//! model: the N×N weight matrix, per-node importance, and how both follow a
//! reordering of nodes.

use radar_har::interpret::node_importance;
use radar_har::learning::{train, HybridLossConfig, TrainConfig};
use radar_har::model::{forward, fuse, node_features, ModelConfig};
use radar_har::radar::{synthesize_dataset, SynthConfig};
use radar_har::tensor::{Mode, Tensor};

fn print_matrix(label: &str, n: usize, at: impl Fn(usize, usize) -> f64) {
    println!("{label}");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:.3}", at(i, j))).collect();
        println!("  [{}]", row.join(" "));
    }
}

fn main() -> radar_har::Result<()> {
    let synth = SynthConfig { samples_per_class: 2, participants: 3, ..SynthConfig::desk() };
    let samples = synthesize_dataset(&synth)?;
    let cfg = ModelConfig { fast_bins: synth.radar.fast_bins, window: synth.window, ..ModelConfig::default() };
    let train_cfg = TrainConfig { max_epochs: 15, seed: 7, ..TrainConfig::default() };
    let (state, _) = train(&samples, &samples, &cfg, &train_cfg, &HybridLossConfig::default())?;
    let sample = &samples[0];

    let out = forward(sample, &state, Mode::Infer, 0)?;
    let n = cfg.nodes;
    print_matrix("attention (rows sum to 1):", n, |i, j| out.attention.at(i, j));
    let importance = node_importance(&out.attention)?;
    println!("importance {importance:.3?}, sum {:.6}", importance.iter().sum::<f64>());

    // feed the nodes in reverse: the attention matrix is reversed along both axes
    let s = node_features(&state, &[sample])?;
    let d = cfg.d_model();
    let reversed: Vec<f64> = (0..n).rev().flat_map(|i| s.data()[i * d..(i + 1) * d].to_vec()).collect();
    let (_, alpha_rev) = fuse(&state, &Tensor::new(vec![n, d], reversed)?)?;
    print_matrix("attention with nodes reversed:", n, |i, j| alpha_rev.at(i, j));
    let worst = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (alpha_rev.at(i, j) - out.attention.at(n - 1 - i, n - 1 - j)).abs())
        .fold(0.0, f64::max);
    println!("largest deviation from the reversed original: {worst:.1e}");
    Ok(())
}
