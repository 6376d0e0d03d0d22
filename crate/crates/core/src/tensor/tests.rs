use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::BnStats;
use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference check of every input coordinate; returns the worst relative error.
fn fd_worst(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    const H: f64 = 1e-5;
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss)[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (ti, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[ti]).expect("input grad").to_vec();
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Weighted sum with fixed pseudo-random weights so every output coordinate
/// carries a distinct upstream gradient.
fn probe(g: &mut Graph, y: Var) -> Var {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shape = g.shape(y).to_vec();
    let wv = g.constant(shape.clone(), w).unwrap();
    let flat_y = g.reshape(y, vec![1, n]).unwrap();
    let flat_w = g.reshape(wv, vec![n, 1]).unwrap();
    let s = g.matmul(flat_y, flat_w).unwrap();
    g.sum(s)
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::new();
    let i2 = g.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let b = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let c = g.matmul(i2, b).unwrap();
    assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let b = g.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[1, 1]);
    assert_eq!(g.value(c), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]));
    let b = g.leaf(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let worst = fd_worst(&[a, b], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        g.sum(c)
    });
    assert!(worst < 1e-4, "{worst}");
}

/// Direct six-loop cross-correlation with zero padding.
fn conv_oracle(x: &Tensor, k: &Tensor, bias: &[f64], pad: (usize, usize)) -> Vec<f64> {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = h + 2 * pad.0 - kh + 1;
    let ow = w + 2 * pad.1 - kw + 1;
    let mut out = vec![0.0; co_n * oh * ow];
    for co in 0..co_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[co];
                for ci in 0..ci_n {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy as isize + ky as isize - pad.0 as isize;
                            let ix = ox as isize + kx as isize - pad.1 as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += k.at(&[co, ci, ky, kx]) * x.at(&[ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = s;
            }
        }
    }
    out
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[1, 4, 5], &mut rng);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let k = g.leaf(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = g.leaf(Tensor::zeros(&[1]));
    let y = g.conv2d(xv, k, Some(b), (0, 0)).unwrap();
    assert_eq!(g.value(y), x.data());
}

#[test]
fn conv_all_ones_sums_to_nine() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[1, 3, 3], 1.0));
    let k = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, None, (0, 0)).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1]);
    assert_eq!(g.value(y), &[9.0]);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 8, 6], &mut rng);
    let k = random(&[4, 2, 3, 3], &mut rng);
    let bias = random(&[4], &mut rng);
    let expected = conv_oracle(&x, &k, bias.data(), (1, 1));
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.leaf(x), g.leaf(k), g.leaf(bias));
    let y = g.conv2d(xv, kv, Some(bv), (1, 1)).unwrap();
    assert_eq!(g.shape(y), &[4, 8, 6]);
    // same summation order is not guaranteed; agreement to rounding
    for (a, b) in g.value(y).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn conv_asymmetric_kernel_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 9, 5], &mut rng);
    let k = random(&[3, 2, 7, 3], &mut rng);
    let expected = conv_oracle(&x, &k, &[0.0; 3], (3, 1));
    let mut g = Graph::new();
    let (xv, kv) = (g.leaf(x), g.leaf(k));
    let y = g.conv2d(xv, kv, None, (3, 1)).unwrap();
    for (a, b) in g.value(y).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_rejects_non_positive_extent() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[1, 2, 2]));
    let k = g.leaf(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(g.conv2d(x, k, None, (0, 0)), Err(crate::Error::Dimension { .. })));
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 2, 5, 4], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let worst = fd_worst(&[x, k, b], |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), (1, 1)).unwrap();
        probe(g, y)
    });
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn batchnorm_infer_with_unit_stats_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 3, 2, 2], &mut rng);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let gamma = g.leaf(Tensor::full(&[3], 1.0));
    let beta = g.leaf(Tensor::zeros(&[3]));
    let mut stats = BnStats::new(3);
    let y = g.batch_norm2d(xv, gamma, beta, &mut stats, Mode::Infer).unwrap();
    for (a, b) in g.value(y).iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
    }
    assert_eq!(stats, BnStats::new(3));
}

#[test]
fn batchnorm_constant_channel_maps_to_beta() {
    let mut g = Graph::new();
    let xv = g.leaf(Tensor::full(&[3, 1, 2, 2], 4.2));
    let gamma = g.leaf(Tensor::full(&[1], 2.0));
    let beta = g.leaf(Tensor::full(&[1], -0.5));
    let mut stats = BnStats::new(1);
    let y = g.batch_norm2d(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
    assert!(g.value(y).iter().all(|v| (v + 0.5).abs() < 1e-9));
    assert!((stats.mean[0] - 0.42).abs() < 1e-12);
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[4, 2, 3, 5], &mut rng);
    let mut g = Graph::new();
    let xv = g.leaf(x);
    let gamma = g.leaf(Tensor::full(&[2], 1.0));
    let beta = g.leaf(Tensor::zeros(&[2]));
    let mut stats = BnStats::new(2);
    let y = g.batch_norm2d(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
    let yv = g.value(y);
    for c in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|b| yv[(b * 2 + c) * 15..][..15].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_single_value_batch_is_degenerate() {
    let mut g = Graph::new();
    let xv = g.leaf(Tensor::zeros(&[1, 2, 1, 1]));
    let gamma = g.leaf(Tensor::full(&[2], 1.0));
    let beta = g.leaf(Tensor::zeros(&[2]));
    let mut stats = BnStats::new(2);
    let r = g.batch_norm2d(xv, gamma, beta, &mut stats, Mode::Train);
    assert!(matches!(r, Err(crate::Error::DegenerateBatch(_))));
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[3, 2, 2, 3], &mut rng);
    let gamma = random(&[2], &mut rng);
    let beta = random(&[2], &mut rng);
    for mode in [Mode::Train, Mode::Infer] {
        let worst = fd_worst(&[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            let mut stats = BnStats { mean: vec![0.1, -0.2], var: vec![0.7, 1.3] };
            let y = g.batch_norm2d(v[0], v[1], v[2], &mut stats, mode).unwrap();
            probe(g, y)
        });
        assert!(worst < 1e-4, "{mode:?}: {worst}");
    }
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let z = g.leaf(Tensor::zeros(&[1, 5]));
    let s = g.softmax(z);
    assert!(g.value(s).iter().all(|v| (v - 0.2).abs() < 1e-15));

    let v = g.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let n = g.l2_normalize(v);
    assert!((g.value(n)[0] - 0.6).abs() < 1e-15 && (g.value(n)[1] - 0.8).abs() < 1e-15);

    let x = g.leaf(Tensor::new(vec![1, 2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
    let p = g.adaptive_avg_pool2d(x, (3, 2)).unwrap();
    assert_eq!(g.value(p), g.value(x));
    assert!(matches!(g.adaptive_avg_pool2d(x, (4, 2)), Err(crate::Error::Dimension { .. })));
}

#[test]
fn adaptive_pool_uses_floor_bins() {
    // 5 rows into 2 bins: [0,2) and [2,5)
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![1, 5, 1], vec![1.0, 3.0, 5.0, 7.0, 9.0]).unwrap());
    let p = g.adaptive_avg_pool2d(x, (2, 1)).unwrap();
    assert_eq!(g.value(p), &[2.0, 7.0]);
}

#[test]
fn dropout_infer_is_identity_and_train_preserves_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[100_000], 1.0));
    let y = g.dropout(x, 0.3, Mode::Infer, &mut rng).unwrap();
    assert_eq!(g.value(y), g.value(x));
    let y = g.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
    let mean = g.value(y).iter().sum::<f64>() / 100_000.0;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
    let zeros = g.value(y).iter().filter(|&&v| v == 0.0).count();
    assert!((zeros as f64 / 1e5 - 0.3).abs() < 0.01);
    assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
}

#[test]
fn unary_op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[3, 4], &mut rng);
    type Build = fn(&mut Graph, Var) -> Var;
    let cases: [(&str, Build); 5] = [
        ("softmax", |g, v| g.softmax(v)),
        ("l2_normalize", |g, v| g.l2_normalize(v)),
        ("relu", |g, v| g.relu(v)),
        ("transpose", |g, v| g.transpose(v).unwrap()),
        ("scale", |g, v| g.scale(v, -2.5)),
    ];
    for (name, f) in cases {
        let worst = fd_worst(&[x.clone()], |g, v| {
            let y = f(g, v[0]);
            probe(g, y)
        });
        assert!(worst < 1e-4, "{name}: {worst}");
    }
}

#[test]
fn structural_op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[4, 3], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let bias = random(&[3], &mut rng);
    let worst = fd_worst(&[a, b, bias], |g, v| {
        let s = g.row_slice(v[0], 1, 2).unwrap();
        let t = g.row_slice(v[0], 0, 2).unwrap();
        let r = g.concat_rows(&[s, t]).unwrap();
        let c = g.concat_cols(&[v[0], v[1]]).unwrap();
        let c = g.row_slice(c, 0, 4).unwrap();
        let bsum = g.add_row_bias(r, v[2]).unwrap();
        let x = g.add(r, bsum).unwrap();
        let p1 = probe(g, x);
        let p2 = probe(g, c);
        let m = g.mean(c);
        let s = g.add(p1, p2).unwrap();
        g.add(s, m).unwrap()
    });
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn pooling_and_channel_mean_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[2, 3, 7, 5], &mut rng);
    let worst = fd_worst(&[x], |g, v| {
        let p = g.adaptive_avg_pool2d(v[0], (3, 2)).unwrap();
        let m = g.mean_channels(p).unwrap();
        let f = g.flatten(m).unwrap();
        let a = probe(g, f);
        let b = probe(g, p);
        g.add(a, b).unwrap()
    });
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn dropout_gradient_follows_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&[2, 6], &mut rng);
    let worst = fd_worst(&[x], |g, v| {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let y = g.dropout(v[0], 0.3, Mode::Train, &mut r).unwrap();
        probe(g, y)
    });
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
    let r = g.relu(x);
    let s = g.sum(r);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    assert_eq!(g.tensor(x).grad().unwrap(), &[0.0, 1.0]);

    assert!(matches!(g.backward(r), Err(crate::Error::Contract(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.leaf(Tensor::full(&[2], 3.0));
    let p = g.param(Tensor::full(&[2], 1.0));
    let s = g.add(c, p).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap(), &[1.0, 1.0]);
}

#[test]
fn identical_seeds_give_bit_identical_results() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random(&[2, 2, 6, 4], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let mut g = Graph::new();
        let (xv, kv) = (g.param(x), g.param(k));
        let y = g.conv2d(xv, kv, None, (1, 1)).unwrap();
        let y = g.dropout(y, 0.3, Mode::Train, &mut rng).unwrap();
        let l = probe(&mut g, y);
        g.backward(l).unwrap();
        (g.value(l).to_vec(), g.grad(xv).unwrap().to_vec(), g.grad(kv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 1..40), cols in 1usize..8) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap());
        let y = g.softmax(x);
        for row in g.value(y).chunks(cols) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tensor_shape_matches_data(shape in prop::collection::vec(1usize..5, 0..4), extra in 0usize..3) {
        let n: usize = shape.iter().product();
        prop_assert!(Tensor::new(shape.clone(), vec![0.0; n]).is_ok());
        if extra > 0 {
            prop_assert!(Tensor::new(shape, vec![0.0; n + extra]).is_err());
        }
    }
}
