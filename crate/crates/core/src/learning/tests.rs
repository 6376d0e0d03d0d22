use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{forward_batch, ModelConfig, ModelState, Param};
use crate::radar::{synthesize_dataset, RadarConfig, SynthConfig, WindowSample};
use crate::tensor::{Mode, Tensor};

fn probs(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn one_hot_row(classes: usize, y: usize, p: f64) -> Vec<f64> {
    let rest = (1.0 - p) / (classes - 1) as f64;
    (0..classes).map(|c| if c == y { p } else { rest }).collect()
}

#[test]
fn cross_entropy_examples() {
    assert_eq!(cross_entropy(&probs(&[&one_hot_row(9, 4, 1.0)]), &[4]).unwrap(), 0.0);
    let uniform = [1.0 / 9.0; 9];
    assert!((cross_entropy(&probs(&[&uniform]), &[0]).unwrap() - 9f64.ln()).abs() < 1e-12);
    let l = cross_entropy(&probs(&[&one_hot_row(9, 1, 0.5), &one_hot_row(9, 7, 0.25)]), &[1, 7]).unwrap();
    assert!((l - 1.0397).abs() < 1e-4, "{l}");
    assert!(matches!(cross_entropy(&probs(&[&uniform]), &[9]), Err(crate::Error::Label { label: 9, classes: 9 })));
    assert!(cross_entropy(&probs(&[&[0.5, 0.6]]), &[0]).is_err());
}

#[test]
fn cross_entropy_clamps_zero_probability() {
    let l = cross_entropy(&probs(&[&one_hot_row(9, 0, 1.0)]), &[3]).unwrap();
    assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
}

/// Straight double loop over the contrastive definition.
fn supcon_oracle(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b = z.len();
    let mut total = 0.0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..b).filter(|&k| k != i).map(|k| (dot(&z[i], &z[k]) / tau).exp()).sum();
        let mut s = 0.0;
        for &j in &positives {
            s += ((dot(&z[i], &z[j]) / tau).exp() / denom).ln();
        }
        total += -s / positives.len() as f64;
    }
    total / b as f64
}

fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<Vec<f64>> {
    (0..b)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

#[test]
fn supcon_examples() {
    let pair = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
    assert!(supervised_contrastive(&pair, &[2, 2], 0.5).unwrap().abs() < 1e-12);
    let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let l = supervised_contrastive(&z, &[0, 0, 1], 0.5).unwrap();
    assert!((l - 2.0 * (1.0 + (-2f64).exp()).ln() / 3.0).abs() < 1e-12);
    assert!((l - 0.0846).abs() < 1e-4);
    let raw = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert!(matches!(supervised_contrastive(&raw, &[0, 0], 0.5), Err(crate::Error::Contract(_))));
}

#[test]
fn supcon_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let b = rng.gen_range(1..=16);
        let d = rng.gen_range(2..10);
        let z = unit_rows(&mut rng, b, d);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..4)).collect();
        let tau = rng.gen_range(0.1..1.0);
        let got = supervised_contrastive(&Tensor::from_rows(&z).unwrap(), &labels, tau).unwrap();
        let want = supcon_oracle(&z, &labels, tau);
        assert!((got - want).abs() < 1e-6, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn supcon_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 6;
    let z = unit_rows(&mut rng, 10, d);
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    // random orthogonal matrix by Gram-Schmidt
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    let rotated: Vec<Vec<f64>> = z.iter().map(|r| q.iter().map(|col| col.iter().zip(r).map(|(a, b)| a * b).sum()).collect()).collect();
    let a = supervised_contrastive(&Tensor::from_rows(&z).unwrap(), &labels, 0.5).unwrap();
    let b = supervised_contrastive(&Tensor::from_rows(&rotated).unwrap(), &labels, 0.5).unwrap();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn supcon_drops_when_positives_approach() {
    let angle = |t: f64| vec![t.cos(), t.sin()];
    let loss = |gap: f64| {
        let z = Tensor::from_rows(&[angle(0.0), angle(gap), angle(2.0), angle(3.0)]).unwrap();
        supervised_contrastive(&z, &[0, 0, 1, 2], 0.5).unwrap()
    };
    for gap in [1.5, 1.0, 0.5, 0.1] {
        assert!(loss(gap * 0.9) < loss(gap));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn supcon_is_nonnegative_and_finite(seed in 0u64..1000, b in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_rows(&mut rng, b, 4);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..3)).collect();
        let l = supervised_contrastive(&Tensor::from_rows(&z).unwrap(), &labels, 0.5).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}

fn small_model() -> ModelConfig {
    ModelConfig { nodes: 3, fast_bins: 10, window: 6, pool: (3, 2), heads: 2, head_dim: 4, hidden: 8, classes: 4, ..ModelConfig::default() }
}

fn random_samples(cfg: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<WindowSample> {
    (0..n)
        .map(|i| WindowSample {
            nodes: (0..cfg.nodes)
                .map(|_| {
                    let len = cfg.fast_bins * cfg.window * 2;
                    Tensor::new(vec![cfg.fast_bins, cfg.window, 2], (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
                })
                .collect(),
            label: i % cfg.classes,
            participant: i % 3,
        })
        .collect()
}

fn loss_value(state: &ModelState, samples: &[WindowSample], cfg: &HybridLossConfig, seed: u64) -> f64 {
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fwd = forward_batch(state, &refs, Mode::Train, &mut rng).unwrap();
    let l = hybrid_loss(&mut fwd, &labels, cfg).unwrap();
    fwd.graph.value(l)[0]
}

#[test]
fn hybrid_degenerate_cases() {
    let cfg = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let state = ModelState::init(cfg.clone(), 13).unwrap();
    let samples = random_samples(&cfg, 6, &mut rng);
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();

    let mut fwd = forward_batch(&state, &refs, Mode::Infer, &mut rng).unwrap();
    let ce = cross_entropy(&fwd.graph.tensor(fwd.probabilities), &labels).unwrap();
    let l = hybrid_loss(&mut fwd, &labels, &HybridLossConfig { gamma: 0.0, tau: 0.5 }).unwrap();
    assert_eq!(fwd.graph.value(l)[0], ce);

    let mut single = forward_batch(&state, &refs[..1], Mode::Infer, &mut rng).unwrap();
    let ce1 = cross_entropy(&single.graph.tensor(single.probabilities), &labels[..1]).unwrap();
    let l1 = hybrid_loss(&mut single, &labels[..1], &HybridLossConfig::default()).unwrap();
    assert_eq!(single.graph.value(l1)[0], ce1);

    assert!(hybrid_loss(&mut single, &labels[..1], &HybridLossConfig { gamma: 1.0, tau: 0.0 }).is_err());
}

#[test]
fn hybrid_gradient_matches_finite_differences() {
    let cfg = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut state = ModelState::init(cfg.clone(), 14).unwrap();
    let mut samples = random_samples(&cfg, 6, &mut rng);
    for (i, s) in samples.iter_mut().enumerate() {
        s.label = i % 2;
    }
    let loss_cfg = HybridLossConfig::default();
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut fwd = forward_batch(&state, &refs, Mode::Train, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let l = hybrid_loss(&mut fwd, &labels, &loss_cfg).unwrap();
    fwd.graph.backward(l).unwrap();
    let grads: Vec<Vec<f64>> = fwd.params.iter().map(|&v| fwd.graph.grad(v).unwrap().to_vec()).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for pi in 0..state.params.len() {
        let n = state.params[pi].tensor.numel();
        for k in [0, n / 2, n - 1] {
            let orig = state.params[pi].tensor.data()[k];
            state.params[pi].tensor.data_mut()[k] = orig + h;
            let up = loss_value(&state, &samples, &loss_cfg, 99);
            state.params[pi].tensor.data_mut()[k] = orig - h;
            let down = loss_value(&state, &samples, &loss_cfg, 99);
            state.params[pi].tensor.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[pi][k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-3, "{}[{k}]: analytic {an} vs fd {fd}", state.params[pi].name);
        }
    }
    assert!(worst < 1e-3);
}

#[test]
fn shared_encoder_gradient_sums_node_contributions() {
    let cfg = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let state = ModelState::init(cfg.clone(), 15).unwrap();
    let samples = random_samples(&cfg, 2, &mut rng);
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let mut fwd = forward_batch(&state, &refs, Mode::Infer, &mut rng).unwrap();
    // d(sum of S ⊙ R)/dθ must equal Σ over node rows of d(row_n · R_n)/dθ
    let d = cfg.d_model();
    let rows = 2 * cfg.nodes;
    let probe: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad_for = |fwd: &mut crate::model::Forward, mask: &dyn Fn(usize) -> bool| {
        let g = &mut fwd.graph;
        let weights: Vec<f64> = probe.iter().enumerate().map(|(i, &p)| if mask(i / d) { p } else { 0.0 }).collect();
        let r = g.constant(vec![rows, d], weights).unwrap();
        let sf = g.reshape(fwd.features, vec![1, rows * d]).unwrap();
        let rf = g.reshape(r, vec![rows * d, 1]).unwrap();
        let s = g.matmul(sf, rf).unwrap();
        let s = g.sum(s);
        g.backward(s).unwrap();
        g.grad(fwd.params[0]).unwrap().to_vec()
    };
    let total = grad_for(&mut fwd, &|_| true);
    let mut summed = vec![0.0; total.len()];
    for n in 0..rows {
        let part = grad_for(&mut fwd, &|r| r == n);
        summed.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
    }
    for (a, b) in total.iter().zip(&summed) {
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}

fn scalar_param(v: f64) -> Vec<Param> {
    vec![Param { name: "theta".into(), tensor: Tensor::new(vec![1], vec![v]).unwrap() }]
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    for g in [3.0, -0.02, 1e-3] {
        let mut p = scalar_param(0.5);
        let mut opt = Adam::new(0.01);
        opt.step(&mut p, &[vec![g]]).unwrap();
        let delta = p[0].tensor.data()[0] - 0.5;
        assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-7, "{delta}");
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = scalar_param(0.5);
    let mut opt = Adam::new(0.1);
    for _ in 0..5 {
        opt.step(&mut p, &[vec![0.0]]).unwrap();
    }
    assert_eq!(p[0].tensor.data()[0], 0.5);
}

#[test]
fn adam_converges_on_square() {
    let mut p = scalar_param(1.0);
    let mut opt = Adam::new(0.1);
    for _ in 0..200 {
        let theta = p[0].tensor.data()[0];
        opt.step(&mut p, &[vec![2.0 * theta]]).unwrap();
    }
    assert!(p[0].tensor.data()[0].abs() < 1e-2);
    assert_eq!(opt.steps(), 200);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut p = scalar_param(1.0);
    let err = Adam::new(0.1).step(&mut p, &[vec![f64::NAN]]).unwrap_err();
    assert!(err.is_numeric() && err.to_string().contains("theta"), "{err}");
    assert_eq!(p[0].tensor.data()[0], 1.0);
}

#[test]
fn confusion_from_predictions() {
    let labels = [0, 1, 2, 2, 1, 0];
    let all_right = Evaluation::from_predictions(&labels, &labels, 3).unwrap();
    assert_eq!(all_right.accuracy, 1.0);
    for c in 0..3 {
        for p in 0..3 {
            assert_eq!(all_right.confusion[c][p], if c == p { 100.0 } else { 0.0 });
        }
    }
    let predicted = [0, 2, 2, 1, 1, 1];
    let e = Evaluation::from_predictions(&labels, &predicted, 4).unwrap();
    let freq = [2.0, 2.0, 2.0, 0.0];
    let weighted: f64 = (0..4).map(|c| e.confusion[c][c] / 100.0 * freq[c]).sum::<f64>() / 6.0;
    assert!((e.accuracy - weighted).abs() < 1e-12);
    assert!(e.confusion[3].iter().all(|&v| v == 0.0));
    for row in &e.confusion[..3] {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
    assert!(Evaluation::from_predictions(&labels, &predicted[..2], 3).is_err());
}

#[test]
fn evaluate_matches_recount() {
    let cfg = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let state = ModelState::init(cfg.clone(), 16).unwrap();
    let samples = random_samples(&cfg, 100, &mut rng);
    let e = evaluate(&state, &samples).unwrap();
    let mut counts = vec![vec![0; cfg.classes]; cfg.classes];
    let mut correct = 0;
    for s in &samples {
        let p = crate::model::forward(s, &state, Mode::Infer, 0).unwrap().predicted();
        counts[s.label][p] += 1;
        correct += usize::from(p == s.label);
    }
    assert_eq!(e.counts, counts);
    assert_eq!(e.accuracy, correct as f64 / 100.0);
}

fn tiny_synth(participants: usize, per_class: usize, seed: u64) -> (SynthConfig, Vec<WindowSample>) {
    let synth = SynthConfig {
        radar: RadarConfig::with_range(16, 7.2, 3),
        participants,
        samples_per_class: per_class,
        window: 8,
        seed,
        ..SynthConfig::desk()
    };
    let samples = synthesize_dataset(&synth).unwrap();
    (synth, samples)
}

fn tiny_model() -> ModelConfig {
    ModelConfig { nodes: 3, fast_bins: 16, window: 8, pool: (4, 2), heads: 2, head_dim: 8, hidden: 32, ..ModelConfig::default() }
}

/// Recomputes the halving/stopping decisions from the logged validation losses.
fn replay_schedule(report: &TrainReport) {
    let cfg = &report.train;
    let (mut best, mut since_best, mut since_lr, mut lr) = (f64::INFINITY, 0, 0, cfg.lr);
    let mut best_epoch = 0;
    for (i, e) in report.epochs.iter().enumerate() {
        assert_eq!(e.lr, lr, "epoch {}", e.epoch);
        assert_eq!(e.epoch, i + 1);
        if e.val_loss < best - cfg.min_delta {
            best = e.val_loss;
            best_epoch = e.epoch;
            since_best = 0;
            since_lr = 0;
        } else {
            since_best += 1;
            since_lr += 1;
            if since_best >= cfg.patience {
                assert_eq!(i + 1, report.epochs.len(), "training continued past patience");
            }
            if since_lr >= cfg.lr_patience {
                lr *= 0.5;
                since_lr = 0;
            }
        }
    }
    assert_eq!(report.best_epoch, best_epoch);
    assert_eq!(report.best_val_loss, best);
    assert!(report.epochs.iter().all(|e| e.val_loss >= report.best_val_loss - cfg.min_delta));
    if report.epochs.len() < cfg.max_epochs {
        assert!(since_best >= cfg.patience);
    }
}

#[test]
fn training_schedule_and_reproducibility() {
    let (_, samples) = tiny_synth(2, 2, 17);
    let (train_set, val) = samples.split_at(samples.len() / 2);
    let model = tiny_model();
    let cfg = TrainConfig { max_epochs: 12, patience: 3, lr_patience: 2, batch_size: 8, seed: 17, ..TrainConfig::default() };
    let (state, report) = train(train_set, val, &model, &cfg, &HybridLossConfig::default()).unwrap();
    assert!(report.epochs_run <= cfg.max_epochs);
    assert_eq!(report.epochs_run, report.epochs.len());
    replay_schedule(&report);
    assert_eq!(report.parameter_count, state.parameter_count());

    let (state2, report2) = train(train_set, val, &model, &cfg, &HybridLossConfig::default()).unwrap();
    assert_eq!(report, report2);
    assert_eq!(state, state2);

    let json = report.to_json();
    let back: TrainReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.epochs_run, report.epochs_run);

    assert!(matches!(train(&[], val, &model, &cfg, &HybridLossConfig::default()), Err(crate::Error::Config(_))));
}

#[test]
fn augmented_training_runs() {
    let (_, samples) = tiny_synth(2, 1, 18);
    let cfg = TrainConfig { max_epochs: 2, batch_size: 6, augment: true, seed: 18, ..TrainConfig::default() };
    let (_, report) = train(&samples, &samples, &tiny_model(), &cfg, &HybridLossConfig::default()).unwrap();
    assert_eq!(report.epochs_run, 2);
}

#[test]
fn overfits_a_small_set() {
    let (_, samples) = tiny_synth(1, 5, 19);
    assert_eq!(samples.len(), 45);
    let cfg = TrainConfig { max_epochs: 200, patience: 1000, lr_patience: 1000, batch_size: 16, seed: 19, ..TrainConfig::default() };
    let model = ModelConfig { dropout: 0.0, ..tiny_model() };
    let (state, _) = train(&samples, &samples, &model, &cfg, &HybridLossConfig::default()).unwrap();
    let acc = evaluate(&state, &samples).unwrap().accuracy;
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn lopo_aggregation() {
    let (_, samples) = tiny_synth(3, 2, 20);
    let cfg = TrainConfig { max_epochs: 1, batch_size: 16, seed: 20, ..TrainConfig::default() };
    let mut seen = Vec::new();
    let summary = lopo_run(&samples, &tiny_model(), &cfg, &HybridLossConfig::default(), |_, r| {
        seen.push(r.held_out.unwrap());
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert_eq!(summary.reports.len(), 3);
    let acc: Vec<f64> = summary.reports.iter().map(|r| r.test.as_ref().unwrap().accuracy).collect();
    assert!((summary.mean_accuracy - acc.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert!(summary.max_accuracy >= summary.mean_accuracy);

    let one: Vec<WindowSample> = samples.into_iter().filter(|s| s.participant == 0).collect();
    assert!(matches!(lopo_run(&one, &tiny_model(), &cfg, &HybridLossConfig::default(), |_, _| Ok(())), Err(crate::Error::Split(_))));
}
