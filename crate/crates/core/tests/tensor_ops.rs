mod common;

use approx::assert_abs_diff_eq;
use common::{check_inputs, naive_conv2d, seeded};
use nexception::{Activation, BatchNormMode, Error, Graph, ParamKind, ParamStore, Tensor};
use proptest::prelude::*;

fn rand64(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut seeded(seed))
}

#[test]
fn conv_of_ones_is_nine() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::ones(&[1, 1, 3, 3])).unwrap();
    let w = g.input(Tensor::ones(&[1, 1, 3, 3])).unwrap();
    let y = g.conv2d(x, w, None, 1, 0, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data()[0], 9.0);
}

#[test]
fn depthwise_same_padding_keeps_shape() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::ones(&[1, 2, 4, 4])).unwrap();
    let w = g.input(Tensor::ones(&[2, 1, 3, 3])).unwrap();
    let y = g.conv2d(x, w, None, 1, 1, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 4, 4]);
}

#[test]
fn padding_wider_than_input_matches_oracle() {
    // A 7x7 kernel with padding 3 over 1x1 and 2x2 maps: most taps fall outside.
    for (side, stride, groups, cin) in [(1, 1, 3, 3), (2, 1, 3, 3), (2, 2, 3, 3), (1, 1, 1, 2), (3, 2, 1, 2)] {
        let cout = 3;
        let x = rand64(&[2, cin, side, side], 5);
        let w = rand64(&[cout, cin / groups, 7, 7], 6);
        let (want, shape) = naive_conv2d(x.data(), [2, cin, side, side], w.data(), [cout, cin / groups, 7, 7], None, stride, 3, groups);
        let mut g = Graph::<f64>::new();
        let (xv, wv) = (g.input_with_grad(x.clone()).unwrap(), g.input(w.clone()).unwrap());
        let y = g.conv2d(xv, wv, None, stride, 3, groups).unwrap();
        assert_eq!(g.shape(y), &shape);
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let err = check_inputs(&[x, w], |g, v| g.conv2d(v[0], v[1], None, stride, 3, groups));
        assert!(err < 1e-6, "side {side} stride {stride} groups {groups}: {err}");
    }
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let x = rand64(&[1, 3, 5, 5], 1);
    let w = rand64(&[4, 3, 3, 3], 2);
    let (want, shape) = naive_conv2d(x.data(), [1, 3, 5, 5], w.data(), [4, 3, 3, 3], None, 1, 0, 1);

    let mut g = Graph::<f64>::new();
    let (xv, wv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap());
    let y = g.conv2d(xv, wv, None, 1, 0, 1).unwrap();
    assert_eq!(g.shape(y), &shape);
    for (a, b) in g.value(y).data().iter().zip(&want) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    // Single precision against the oracle on the same rounded inputs, within
    // the standard dot-product rounding bound n·u·Σ|xᵢwᵢ| (n = 27 terms).
    let (x32, w32) = (x.cast::<f32>(), w.cast::<f32>());
    let (xr, wr) = (x32.cast::<f64>(), w32.cast::<f64>());
    let (want32, _) = naive_conv2d(xr.data(), [1, 3, 5, 5], wr.data(), [4, 3, 3, 3], None, 1, 0, 1);
    let abs_x = xr.map(f64::abs);
    let abs_w = wr.map(f64::abs);
    let (mag, _) = naive_conv2d(abs_x.data(), [1, 3, 5, 5], abs_w.data(), [4, 3, 3, 3], None, 1, 0, 1);
    let mut g = Graph::<f32>::new();
    let (xv, wv) = (g.input(x32).unwrap(), g.input(w32).unwrap());
    let y = g.conv2d(xv, wv, None, 1, 0, 1).unwrap();
    for ((a, b), m) in g.value(y).data().iter().zip(&want32).zip(&mag) {
        let bound = 27.0 * f32::EPSILON as f64 / 2.0 * m;
        assert!((*a as f64 - b).abs() <= bound, "{a} vs {b} (bound {bound})");
    }
}

#[test]
fn conv_rejects_bad_groups_and_channels() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::ones(&[1, 3, 4, 4])).unwrap();
    let w = g.input(Tensor::ones(&[4, 1, 3, 3])).unwrap();
    let err = g.conv2d(x, w, None, 1, 1, 2).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let w2 = g.input(Tensor::ones(&[4, 2, 3, 3])).unwrap();
    let err = g.conv2d(x, w2, None, 1, 1, 1).unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
}

#[test]
fn linear_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
    let w = g.input(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
    let b = g.input(Tensor::new(&[1], vec![5.0]).unwrap()).unwrap();
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[16.0]);

    let xs = rand64(&[2, 3], 5);
    let eye = g.input(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 })).unwrap();
    let zero = g.input(Tensor::zeros(&[3])).unwrap();
    let xv = g.input(xs.clone()).unwrap();
    let y = g.linear(xv, eye, Some(zero)).unwrap();
    assert_eq!(g.value(y).data(), xs.data());

    let wr = g.input(rand64(&[4, 3], 6)).unwrap();
    let both = g.linear(xv, wr, None).unwrap();
    for row in 0..2 {
        let single = g.input(Tensor::new(&[1, 3], xs.data()[row * 3..row * 3 + 3].to_vec()).unwrap()).unwrap();
        let y1 = g.linear(single, wr, None).unwrap();
        assert_eq!(g.value(y1).data(), &g.value(both).data()[row * 4..row * 4 + 4]);
    }

    let bad = g.input(Tensor::<f64>::zeros(&[4, 5])).unwrap();
    assert!(g.linear(xv, bad, None).is_err());
}

#[test]
fn activation_values() {
    assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
    assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
    // x·Φ(x) at 1 with Φ(1) = 0.841344746...
    assert_abs_diff_eq!(Activation::Gelu.apply(1.0f64), 0.841_344_746, epsilon = 1e-5);
    assert_abs_diff_eq!(Activation::Elu.apply(-1.0f64), (-1.0f64).exp() - 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(Activation::Celu.apply(-1.0f64), -0.632_121, epsilon = 1e-6);
}

#[test]
fn batch_norm_training_standardizes() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::randn(&[4, 3, 5, 5], 3.0, &mut seeded(3)).map(|v| v + 2.0)).unwrap();
    let gamma = g.input(Tensor::ones(&[3])).unwrap();
    let beta = g.input(Tensor::zeros(&[3])).unwrap();
    let (y, stats) = g.batch_norm(x, gamma, beta, BatchNormMode::Batch).unwrap();
    assert!(stats.is_some());
    let yd = g.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..25).map(move |p| (n, p)))
            .map(|(n, p)| yd.data()[(n * 3 + c) * 25 + p])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
    }
}

#[test]
fn batch_norm_eval_is_affine() {
    let mut g = Graph::<f64>::new();
    let xt = rand64(&[2, 2, 3, 3], 4);
    let x = g.input(xt.clone()).unwrap();
    let gamma = g.input(Tensor::full(&[2], 2.0)).unwrap();
    let beta = g.input(Tensor::full(&[2], 3.0)).unwrap();
    let (mean, var) = ([0.0, 0.0], [1.0, 1.0]);
    let (y, stats) = g
        .batch_norm(x, gamma, beta, BatchNormMode::Running { mean: &mean, var: &var })
        .unwrap();
    assert!(stats.is_none());
    for (a, b) in g.value(y).data().iter().zip(xt.data()) {
        assert_abs_diff_eq!(*a, 2.0 * b + 3.0, epsilon = 1e-4);
    }
}

#[test]
fn batch_norm_degenerate_batch_is_an_error() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::ones(&[1, 2, 1, 1])).unwrap();
    let gamma = g.input(Tensor::ones(&[2])).unwrap();
    let beta = g.input(Tensor::zeros(&[2])).unwrap();
    let err = g.batch_norm(x, gamma, beta, BatchNormMode::Batch).unwrap_err();
    assert!(matches!(err, Error::DegenerateStatistics(_)));
}

#[test]
fn layer_norm_standardizes_channels() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::randn(&[2, 6, 3, 3], 2.0, &mut seeded(8))).unwrap();
    let gamma = g.input(Tensor::ones(&[6])).unwrap();
    let beta = g.input(Tensor::zeros(&[6])).unwrap();
    let y = g.layer_norm(x, gamma, beta).unwrap();
    let yd = g.value(y);
    for n in 0..2 {
        for p in 0..9 {
            let vals: Vec<f64> = (0..6).map(|c| yd.data()[(n * 6 + c) * 9 + p]).collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-4);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    // Affine: scale 2, shift 3 applied after normalization.
    let gamma2 = g.input(Tensor::full(&[6], 2.0)).unwrap();
    let beta2 = g.input(Tensor::full(&[6], 3.0)).unwrap();
    let y2 = g.layer_norm(x, gamma2, beta2).unwrap();
    for (a, b) in g.value(y2).data().iter().zip(g.value(y).data()) {
        assert_abs_diff_eq!(*a, 2.0 * b + 3.0, epsilon = 1e-12);
    }
}

#[test]
fn global_avg_pool_examples() {
    let mut g = Graph::<f64>::new();
    let c = g.input(Tensor::full(&[1, 1, 3, 3], 5.0)).unwrap();
    let y = g.global_avg_pool(c).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
    let r = g.input(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let y = g.global_avg_pool(r).unwrap();
    assert_eq!(g.value(y).data(), &[2.5]);
    let big = g.input(Tensor::zeros(&[2, 8, 7, 7])).unwrap();
    let y = g.global_avg_pool(big).unwrap();
    assert_eq!(g.shape(y), &[2, 8]);
}

#[test]
fn backward_simple_losses() {
    let mut store = ParamStore::<f64>::new();
    let id = store
        .add("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), ParamKind::Weight)
        .unwrap();

    let mut g = Graph::new();
    let w = g.param(&store, id).unwrap();
    let loss = g.sum(w).unwrap();
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[1.0, 1.0]);

    store.zero_grad();
    let mut g = Graph::new();
    let w = g.param(&store, id).unwrap();
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[2.0, 4.0]);

    // A second backward without clearing accumulates.
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[4.0, 8.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut store = ParamStore::<f64>::new();
    let mut g = Graph::new();
    let x = g.input_with_grad(Tensor::ones(&[3])).unwrap();
    let err = g.backward(x, &mut store).unwrap_err();
    assert!(matches!(err, Error::NonScalarLoss(ref s) if s == &[3]));
}

#[test]
fn non_finite_results_are_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[1, 2], 1e308)).unwrap();
    let err = g.add(x, x).unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "add" }), "{err}");
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::randn(&[3, 4, 9, 9], 1.0, &mut seeded(11))).unwrap();
        let w = g.input(Tensor::randn(&[6, 4, 3, 3], 0.2, &mut seeded(12))).unwrap();
        let y = g.conv2d(x, w, None, 2, 1, 1).unwrap();
        let y = g.activation(y, Activation::Gelu).unwrap();
        g.value(y).to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

// ---- finite-difference checks of every differentiable op ----

const TOL: f64 = 1e-4;

#[test]
fn gradcheck_conv2d_variants() {
    for (cin, cout, k, stride, pad, groups) in [(3, 4, 3, 1, 1, 1), (4, 4, 3, 2, 1, 4), (4, 6, 1, 1, 0, 1), (4, 6, 3, 2, 0, 2)] {
        let x = rand64(&[2, cin, 5, 5], 20);
        let w = rand64(&[cout, cin / groups, k, k], 21);
        let b = rand64(&[cout], 22);
        let err = check_inputs(&[x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad, groups));
        assert!(err < TOL, "conv {cin}->{cout} k{k} s{stride} g{groups}: {err}");
    }
}

#[test]
fn gradcheck_linear() {
    let err = check_inputs(&[rand64(&[3, 5], 30), rand64(&[4, 5], 31), rand64(&[4], 32)], |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn gradcheck_activations() {
    // Keep inputs away from the ReLU kink.
    let x = rand64(&[2, 3, 4], 40).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    for kind in Activation::ALL {
        let err = check_inputs(std::slice::from_ref(&x), |g, v| g.activation(v[0], kind));
        assert!(err < TOL, "{kind:?}: {err}");
    }
    let err = check_inputs(&[x], |g, v| g.sigmoid(v[0]));
    assert!(err < TOL, "sigmoid: {err}");
}

#[test]
fn gradcheck_batch_norm() {
    let err = check_inputs(&[rand64(&[3, 2, 3, 3], 50), rand64(&[2], 51), rand64(&[2], 52)], |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Batch)?.0)
    });
    assert!(err < TOL, "{err}");
    let (mean, var) = ([0.1, -0.2], [0.5, 2.0]);
    let err = check_inputs(&[rand64(&[2, 2, 3, 3], 53), rand64(&[2], 54), rand64(&[2], 55)], |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Running { mean: &mean, var: &var })?.0)
    });
    assert!(err < TOL, "running: {err}");
}

#[test]
fn gradcheck_layer_norm() {
    let err = check_inputs(&[rand64(&[2, 4, 3, 3], 60), rand64(&[4], 61), rand64(&[4], 62)], |g, v| {
        g.layer_norm(v[0], v[1], v[2])
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn gradcheck_pools_and_elementwise() {
    // Distinct values so the max is unique under perturbation.
    let distinct = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 37) % 50) as f64 * 0.1);
    let err = check_inputs(&[distinct], |g, v| g.max_pool(v[0], 3, 2, 1));
    assert!(err < TOL, "max_pool: {err}");

    let err = check_inputs(&[rand64(&[2, 3, 4, 4], 70)], |g, v| g.global_avg_pool(v[0]));
    assert!(err < TOL, "gap: {err}");

    let (a, b) = (rand64(&[2, 3, 2, 2], 71), rand64(&[2, 3, 2, 2], 72));
    let err = check_inputs(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    assert!(err < TOL, "add: {err}");
    let err = check_inputs(&[a.clone(), b], |g, v| g.mul(v[0], v[1]));
    assert!(err < TOL, "mul: {err}");

    let err = check_inputs(&[a.clone(), rand64(&[2, 3], 73)], |g, v| g.scale_channels(v[0], v[1]));
    assert!(err < TOL, "scale_channels: {err}");
    let err = check_inputs(std::slice::from_ref(&a), |g, v| g.scale_samples(v[0], &[0.0, 2.5]));
    assert!(err < TOL, "scale_samples: {err}");
    let err = check_inputs(std::slice::from_ref(&a), |g, v| {
        let r = g.reshape(v[0], &[2, 12])?;
        g.mean(r)
    });
    assert!(err < TOL, "reshape/mean: {err}");
}

#[test]
fn gradcheck_losses() {
    let targets = Tensor::new(&[2, 3], vec![0.2, 0.5, 0.3, 1.0, 0.0, 0.0]).unwrap();
    let err = check_inputs(&[rand64(&[2, 3], 80).map(|v| v * 3.0)], |g, v| g.bce_soft_loss(v[0], &targets));
    assert!(err < 1e-6, "bce: {err}");
    let err = check_inputs(&[rand64(&[2, 3], 81)], |g, v| g.soft_cross_entropy(v[0], &targets));
    assert!(err < TOL, "soft ce: {err}");
}

#[test]
fn bce_golden_values() {
    let mut g = Graph::<f64>::new();
    let z = g.input(Tensor::zeros(&[1, 4])).unwrap();
    let l = g.bce_soft_loss(z, &Tensor::full(&[1, 4], 0.5)).unwrap();
    assert_abs_diff_eq!(g.value(l).item(), std::f64::consts::LN_2, epsilon = 1e-12);
    let z = g.input(Tensor::full(&[1, 1], 40.0)).unwrap();
    let l = g.bce_soft_loss(z, &Tensor::ones(&[1, 1])).unwrap();
    let v = g.value(l).item();
    assert!(v.is_finite() && v < 1e-15, "{v}");
    assert!(g.bce_soft_loss(z, &Tensor::full(&[1, 1], 1.5)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_oracle_on_random_geometry(
        n in 1usize..3, groups in 1usize..4, cin_g in 1usize..3, cout_g in 1usize..3,
        k in prop::sample::select(vec![1usize, 2, 3, 5]), stride in 1usize..4, pad in 0usize..3,
        h in 5usize..9, w in 5usize..9, seed in any::<u64>(),
    ) {
        prop_assume!(pad < k);
        let cin = cin_g * groups;
        let cout = cout_g * groups;
        let xs = [n, cin, h, w];
        let ws = [cout, cin_g, k, k];
        let x = rand64(&xs, seed);
        let wt = rand64(&ws, seed ^ 1);
        let b = rand64(&[cout], seed ^ 2);
        let (want, shape) = naive_conv2d(x.data(), xs, wt.data(), ws, Some(b.data()), stride, pad, groups);
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.input(x).unwrap(), g.input(wt).unwrap(), g.input(b).unwrap());
        let y = g.conv2d(xv, wv, Some(bv), stride, pad, groups).unwrap();
        prop_assert_eq!(g.shape(y), &shape[..]);
        for (a, e) in g.value(y).data().iter().zip(&want) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences(
        groups in 1usize..3, stride in 1usize..3, k in prop::sample::select(vec![1usize, 3]), seed in any::<u64>(),
    ) {
        let pad = k / 2;
        let x = rand64(&[1, 2 * groups, 4, 4], seed);
        let w = rand64(&[2 * groups, 2, k, k], seed ^ 3);
        let err = check_inputs(&[x, w], |g, v| g.conv2d(v[0], v[1], None, stride, pad, groups));
        prop_assert!(err < TOL, "err {}", err);
    }

    #[test]
    fn tensor_numel_matches_shape(dims in prop::collection::vec(1usize..5, 0..5)) {
        let t = Tensor::<f32>::zeros(&dims);
        prop_assert_eq!(t.numel(), dims.iter().product::<usize>());
        prop_assert!(Tensor::<f32>::new(&dims, vec![0.0; t.numel() + 1]).is_err());
    }
}
