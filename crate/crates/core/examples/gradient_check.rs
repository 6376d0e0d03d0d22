//! Compares back-propagated gradients of the hybrid loss with central
//! differences, one coordinate per parameter tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radar_har::learning::{hybrid_loss, HybridLossConfig};
use radar_har::model::{forward_batch, ModelConfig, ModelState};
use radar_har::radar::WindowSample;
use radar_har::tensor::{Mode, Tensor};

fn main() -> radar_har::Result<()> {
    let cfg = ModelConfig { nodes: 3, fast_bins: 16, window: 10, pool: (4, 2), heads: 2, head_dim: 8, hidden: 16, ..ModelConfig::default() };
    let mut state = ModelState::init(cfg.clone(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<WindowSample> = (0..6)
        .map(|i| {
            let nodes = (0..cfg.nodes)
                .map(|_| {
                    let data = (0..cfg.fast_bins * cfg.window * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    Tensor::new(vec![cfg.fast_bins, cfg.window, 2], data)
                })
                .collect::<radar_har::Result<Vec<_>>>()?;
            Ok(WindowSample { nodes, label: i % 3, participant: 0 })
        })
        .collect::<radar_har::Result<_>>()?;
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let loss_cfg = HybridLossConfig::default();

    // the same dropout stream every time, so the loss is a fixed function of θ
    let loss = |state: &ModelState| -> radar_har::Result<f64> {
        let mut fwd = forward_batch(state, &refs, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9))?;
        let l = hybrid_loss(&mut fwd, &labels, &loss_cfg)?;
        Ok(fwd.graph.value(l)[0])
    };
    let mut fwd = forward_batch(&state, &refs, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9))?;
    let l = hybrid_loss(&mut fwd, &labels, &loss_cfg)?;
    fwd.graph.backward(l)?;
    println!("loss {:.6}, {} parameters", fwd.graph.value(l)[0], state.parameter_count());

    // small enough that no ReLU in the encoder changes side
    let h = 1e-6;
    for p in 0..state.params.len() {
        let k = state.params[p].tensor.numel() / 2;
        let analytic = fwd.graph.grad(fwd.params[p]).expect("parameter gradient")[k];
        let orig = state.params[p].tensor.data()[k];
        state.params[p].tensor.data_mut()[k] = orig + h;
        let up = loss(&state)?;
        state.params[p].tensor.data_mut()[k] = orig - h;
        let down = loss(&state)?;
        state.params[p].tensor.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        println!("{:<28} {analytic:>13.6e} {numeric:>13.6e}  rel {rel:.1e}", state.params[p].name);
    }
    Ok(())
}
