use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{forward, ModelConfig};

fn stochastic(n: usize, rng: &mut ChaCha8Rng) -> AttentionMatrix {
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|v| v / s));
    }
    AttentionMatrix::new(n, data).unwrap()
}

#[test]
fn importance_examples() {
    let uniform = AttentionMatrix::new(4, vec![0.25; 16]).unwrap();
    assert_eq!(node_importance(&uniform).unwrap(), vec![1.0; 4]);
    let focused = AttentionMatrix::new(2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    assert_eq!(node_importance(&focused).unwrap(), vec![2.0, 0.0]);
    let bad = AttentionMatrix::new(2, vec![0.7, 0.7, 0.5, 0.5]).unwrap();
    assert!(matches!(node_importance(&bad), Err(crate::Error::Contract(_))));
}

proptest! {
    #[test]
    fn importance_sums_to_node_count(seed in 0u64..10_000, n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imp = node_importance(&stochastic(n, &mut rng)).unwrap();
        prop_assert!((imp.iter().sum::<f64>() - n as f64).abs() < 1e-5);
        prop_assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn importance_commutes_with_permutation(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let a = stochastic(n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        // (P α Pᵀ)[i][j] = α[perm i][perm j]
        let permuted = AttentionMatrix::new(n, (0..n * n).map(|k| a.at(perm[k / n], perm[k % n])).collect()).unwrap();
        let ia = node_importance(&a).unwrap();
        let ip = node_importance(&permuted).unwrap();
        for j in 0..n {
            prop_assert!((ip[j] - ia[perm[j]]).abs() < 1e-12);
        }
    }
}

fn small_state(seed: u64) -> ModelState {
    ModelState::init(ModelConfig { nodes: 4, fast_bins: 10, window: 6, pool: (3, 2), heads: 2, head_dim: 4, hidden: 8, ..ModelConfig::default() }, seed)
        .unwrap()
}

fn random_samples(n: usize, rng: &mut ChaCha8Rng) -> Vec<WindowSample> {
    (0..n)
        .map(|i| WindowSample {
            nodes: (0..4)
                .map(|_| Tensor::new(vec![10, 6, 2], (0..120).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap())
                .collect(),
            label: i % 9,
            participant: 0,
        })
        .collect()
}

#[test]
fn dataset_importance_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let state = small_state(1);
    let samples = random_samples(7, &mut rng);
    let single = dataset_importance(&state, &samples[..1]).unwrap();
    let alpha = forward(&samples[0], &state, Mode::Infer, 0).unwrap().attention;
    assert_eq!(single.mean, node_importance(&alpha).unwrap());
    let all = dataset_importance(&state, &samples).unwrap();
    assert_eq!(all.argmax_counts.iter().sum::<usize>(), 7);
    assert_eq!(all.per_sample.len(), 7);
    assert!((all.mean.iter().sum::<f64>() - 4.0).abs() < 1e-9);
    assert!(dataset_importance(&state, &[]).is_err());
}

#[test]
fn ablation_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sample = random_samples(1, &mut rng).remove(0);
    // a window with large, distinct channel moments: 10x100x2 for stable statistics
    sample.nodes[2] = Tensor::new(
        vec![10, 100, 2],
        (0..2000).map(|k| if k % 2 == 0 { rng.gen_range(0.0..4.0) } else { rng.gen_range(-3.0..3.0) }).collect(),
    )
    .unwrap();
    let before = sample.clone();
    let zeroed = ablate(&sample, 1, AblationMode::Zeros, 0).unwrap();
    assert!(zeroed.nodes[1].data().iter().all(|&v| v == 0.0));
    assert_eq!(zeroed.nodes[1].shape(), sample.nodes[1].shape());
    for k in [0, 2, 3] {
        assert_eq!(zeroed.nodes[k], sample.nodes[k]);
    }
    let random = ablate(&sample, 2, AblationMode::Random, 5).unwrap();
    for k in [0, 1, 3] {
        assert_eq!(random.nodes[k], sample.nodes[k]);
    }
    let std = |t: &Tensor, ch: usize| {
        let v: Vec<f64> = t.data().iter().skip(ch).step_by(2).copied().collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    for ch in 0..2 {
        let (a, b) = (std(&sample.nodes[2], ch), std(&random.nodes[2], ch));
        assert!((a - b).abs() / a < 0.1, "channel {ch}: {a} vs {b}");
    }
    assert_ne!(random.nodes[2], sample.nodes[2]);
    assert_eq!(random, ablate(&sample, 2, AblationMode::Random, 5).unwrap());
    assert_eq!(sample, before);
    assert!(matches!(ablate(&sample, 4, AblationMode::Zeros, 0), Err(crate::Error::Bounds(_))));
}

#[test]
fn spearman_examples() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.5]) - 1.0).abs() < 1e-12);
    assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    // ties: ranks [1.5, 1.5, 3] vs [1, 2, 3] → 0.8660…
    assert!((spearman(&[5.0, 5.0, 7.0], &[1.0, 2.0, 3.0]) - 3f64.sqrt() / 2.0).abs() < 1e-12);
    assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
}

#[test]
fn ablation_study_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = small_state(3);
    let samples = random_samples(12, &mut rng);
    let study = importance_ablation_study(&state, &samples, &[1, 2, 3]).unwrap();
    assert_eq!(study.rows.len(), 8);
    assert_eq!(study.baseline_accuracy, evaluate(&state, &samples).unwrap().accuracy);
    assert!(study.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    let mut ranks: Vec<usize> = study.rows[..4].iter().map(|r| r.importance_rank).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, vec![1, 2, 3, 4]);
    let top = study.rows[..4].iter().max_by(|a, b| a.importance.total_cmp(&b.importance)).unwrap();
    assert_eq!(top.importance_rank, 1);

    let mut buf = Vec::new();
    study.write_csv(&mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["node", "mode", "importance", "argmax_count", "acc_zero_ablation", "acc_random_ablation", "baseline_acc"]
    );
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2 * 4 + 1 + 1);
    assert_eq!(&records[0][0], "none");
    assert_eq!(records[0][6].parse::<f64>().unwrap(), study.baseline_accuracy);
    assert_eq!(&records[9][0], "spearman");
    assert_eq!(records[9][2].parse::<f64>().unwrap(), study.spearman_zero);
}
