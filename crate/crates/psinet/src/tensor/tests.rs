use super::*;
use crate::error::Error;

fn t(shape: impl Into<Shape>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "element {i}: got {a}, expected {e} (tol {tol})"
        );
    }
}

#[test]
fn conv2d_all_ones_kernel_matches_sliding_window() {
    let mut g = Graph::new();
    let x = g.leaf(&t([1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
    let w = g.leaf(&t([1, 1, 3, 3], &[1.; 9]));
    let b = g.leaf(&t(vec![1], &[0.]));
    let y = g.conv2d(x, w, b).unwrap();
    assert_close(
        g.value(y).data(),
        &[12., 21., 16., 27., 45., 33., 24., 39., 28.],
        1e-12,
    );
}

#[test]
fn conv2d_zero_kernel_yields_constant_bias() {
    let mut g = Graph::new();
    let x = g.leaf(&t([1, 2, 4, 4], &(0..32).map(|v| v as f64).collect::<Vec<_>>()));
    let w = g.leaf(&Tensor::zeros([3, 2, 3, 3]));
    let b = g.leaf(&t(vec![3], &[-1.5, 0.0, 2.5]));
    let y = g.conv2d(x, w, b).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape().dims(), &[1, 3, 4, 4]);
    for co in 0..3 {
        for p in 0..16 {
            assert_eq!(out.data()[co * 16 + p], [-1.5, 0.0, 2.5][co]);
        }
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::<f64>::zeros([1, 2, 4, 4]));
    let w = g.leaf(&Tensor::zeros([1, 3, 3, 3]));
    let b = g.leaf(&Tensor::zeros(vec![1]));
    assert!(matches!(
        g.conv2d(x, w, b),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let x = t([1, 2, 4, 4], &seeded_values(32, 3));
    let w = t([2, 2, 3, 3], &seeded_values(36, 5));
    let b = t(vec![2], &[0.3, -0.2]);
    let err = grad_check(
        |g, vars| {
            let y = g.conv2d(vars[0], vars[1], vars[2])?;
            Ok(g.sum(y))
        },
        &[x, w, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn relu_clamps_negatives() {
    let mut g = Graph::new();
    let x = g.leaf(&t(vec![3], &[-1., 0., 2.]));
    let y = g.relu(x);
    assert_close(g.value(y).data(), &[0., 0., 2.], 0.0);
}

#[test]
fn relu_all_negative_has_zero_gradient() {
    let p = Tensor::param(vec![4], vec![-1.0f64, -0.5, -2.0, -0.1]).unwrap();
    let mut g = Graph::new();
    let x = g.leaf(&p);
    let y = g.relu(x);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.value(s).scalar_value().unwrap(), 0.0);
    assert_eq!(p.grad().unwrap(), vec![0.0; 4]);
}

#[test]
fn relu_gradient_away_from_zero() {
    let x = t(vec![6], &[-2.0, -0.7, -0.3, 0.4, 1.1, 2.5]);
    let err = grad_check(
        |g, vars| {
            let y = g.relu(vars[0]);
            Ok(g.sum(y))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "max relative error {err}");
}

#[test]
fn maxpool_single_window() {
    let mut g = Graph::new();
    let x = g.leaf(&t([1, 1, 2, 2], &[1., 2., 3., 4.]));
    let y = g.maxpool2(x).unwrap();
    assert_close(g.value(y).data(), &[4.], 0.0);
}

#[test]
fn maxpool_constant_input() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::filled([1, 1, 4, 4], 7.25f64));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).shape().dims(), &[1, 1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 7.25));
}

#[test]
fn maxpool_rejects_odd_dimensions() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::<f64>::zeros([1, 1, 3, 4]));
    assert!(g.maxpool2(x).is_err());
}

#[test]
fn maxpool_gradient_is_argmax_indicator() {
    let p = Tensor::param([1, 1, 2, 4], vec![1., 9., 2., 3., 4., 0., 8., 8.]).unwrap();
    let mut g = Graph::new();
    let x = g.leaf(&p);
    let y = g.maxpool2(x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    // Right window ties at 8; first occurrence in row-major order wins.
    assert_eq!(p.grad().unwrap(), vec![0., 1., 0., 0., 0., 0., 1., 0.]);
}

#[test]
fn upsample_constant_stays_constant() {
    for factor in [2usize, 4] {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::filled([1, 2, 3, 5], -0.75f64));
        let y = g.upsample(x, factor).unwrap();
        assert_eq!(g.value(y).shape().dims(), &[1, 2, 3 * factor, 5 * factor]);
        for &v in g.value(y).data() {
            assert!((v - -0.75).abs() < 1e-12);
        }
    }
}

#[test]
fn upsample_single_pixel() {
    let mut g = Graph::new();
    let x = g.leaf(&t([1, 1, 1, 1], &[3.5]));
    let y = g.upsample(x, 2).unwrap();
    assert_close(g.value(y).data(), &[3.5; 4], 0.0);
}

#[test]
fn upsample_rejects_other_factors() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::<f64>::zeros([1, 1, 2, 2]));
    assert!(g.upsample(x, 3).is_err());
    assert!(g.upsample(x, 1).is_err());
}

#[test]
fn upsample_backward_is_adjoint() {
    for factor in [2usize, 4] {
        let x_data = seeded_values(2 * 3 * 4, 11);
        let y_data = seeded_values(2 * 3 * 4 * factor * factor, 13);
        let x = Tensor::param([1, 2, 3, 4], x_data.clone()).unwrap();
        let y = t([1, 2, 3 * factor, 4 * factor], &y_data);

        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let up = g.upsample(xv, factor).unwrap();
        let yv = g.leaf(&y);
        let prod = g.mul(up, yv).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();

        // <up(x), y> == <x, up_adjoint(y)>; the param gradient is the adjoint.
        let lhs = g.value(s).scalar_value().unwrap();
        let rhs: f64 = x
            .grad()
            .unwrap()
            .iter()
            .zip(&x_data)
            .map(|(g, x)| g * x)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10, "factor {factor}: {lhs} vs {rhs}");
    }
}

#[test]
fn concat_shapes_and_roundtrip() {
    let a_data = seeded_values(2 * 4 * 4, 17);
    let b_data = seeded_values(3 * 4 * 4, 19);
    let mut g = Graph::new();
    let a = g.leaf(&t([1, 2, 4, 4], &a_data));
    let b = g.leaf(&t([1, 3, 4, 4], &b_data));
    let y = g.concat_channels(a, b).unwrap();
    assert_eq!(g.value(y).shape().dims(), &[1, 5, 4, 4]);
    // Splitting at the first operand's channel count recovers both inputs.
    assert_eq!(&g.value(y).data()[..32], a_data.as_slice());
    assert_eq!(&g.value(y).data()[32..], b_data.as_slice());
}

#[test]
fn concat_with_empty_channel_tensor_is_identity() {
    let a_data = seeded_values(2 * 2 * 2, 23);
    let mut g = Graph::new();
    let a = g.leaf(&t([1, 2, 2, 2], &a_data));
    let empty = g.leaf(&Tensor::zeros([1, 0, 2, 2]));
    let y = g.concat_channels(a, empty).unwrap();
    assert_eq!(g.value(y).shape().dims(), &[1, 2, 2, 2]);
    assert_eq!(g.value(y).data(), a_data.as_slice());
}

#[test]
fn concat_rejects_spatial_mismatch() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::<f64>::zeros([1, 2, 4, 4]));
    let b = g.leaf(&Tensor::<f64>::zeros([1, 2, 2, 4]));
    assert!(g.concat_channels(a, b).is_err());
}

#[test]
fn concat_backward_splits_gradient() {
    let a = Tensor::param([1, 1, 2, 2], vec![1.0f64; 4]).unwrap();
    let b = Tensor::param([1, 2, 2, 2], vec![1.0f64; 8]).unwrap();
    let scale = t([1, 3, 2, 2], &(1..=12).map(|v| v as f64).collect::<Vec<_>>());
    let mut g = Graph::new();
    let av = g.leaf(&a);
    let bv = g.leaf(&b);
    let y = g.concat_channels(av, bv).unwrap();
    let sv = g.leaf(&scale);
    let prod = g.mul(y, sv).unwrap();
    let s = g.sum(prod);
    g.backward(s).unwrap();
    assert_eq!(a.grad().unwrap(), vec![1., 2., 3., 4.]);
    assert_eq!(b.grad().unwrap(), (5..=12).map(|v| v as f64).collect::<Vec<_>>());
}

#[test]
fn softmax_equal_logits_are_uniform() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::filled([1, 2, 1, 1], 3.0f64));
    let y = g.softmax_channels(x).unwrap();
    assert_close(g.value(y).data(), &[0.5, 0.5], 1e-15);
}

#[test]
fn softmax_is_shift_invariant() {
    let base = seeded_values(4 * 2 * 2, 29);
    let shifted: Vec<f64> = base.iter().map(|v| v + 123.456).collect();
    let mut g = Graph::new();
    let a = g.leaf(&t([1, 4, 2, 2], &base));
    let b = g.leaf(&t([1, 4, 2, 2], &shifted));
    let ya = g.softmax_channels(a).unwrap();
    let yb = g.softmax_channels(b).unwrap();
    assert_close(g.value(ya).data(), g.value(yb).data(), 1e-12);
}

#[test]
fn softmax_channel_sums_are_one() {
    let mut g = Graph::new();
    let x = g.leaf(&t([2, 3, 2, 2], &seeded_values(24, 31)));
    let y = g.softmax_channels(x).unwrap();
    let out = g.value(y).data();
    for img in 0..2 {
        for p in 0..4 {
            let sum: f64 = (0..3).map(|c| out[(img * 3 + c) * 4 + p]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_rejects_single_channel() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::<f64>::zeros([1, 1, 2, 2]));
    assert!(g.softmax_channels(x).is_err());
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let x = t([1, 3, 2, 2], &seeded_values(12, 37));
    let probe = t([1, 3, 2, 2], &seeded_values(12, 41));
    let err = grad_check(
        |g, vars| {
            let y = g.softmax_channels(vars[0])?;
            let pv = g.leaf(&probe);
            let prod = g.mul(y, pv)?;
            Ok(g.sum(prod))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "max relative error {err}");
}

#[test]
fn sigmoid_at_zero_is_half() {
    let mut g = Graph::new();
    let x = g.leaf(&t(vec![1], &[0.0]));
    let y = g.sigmoid(x);
    assert_close(g.value(y).data(), &[0.5], 0.0);
}

#[test]
fn sigmoid_symmetry_identity() {
    let vals = seeded_values(16, 43);
    let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
    let mut g = Graph::new();
    let a = g.leaf(&t(vec![16], &vals));
    let b = g.leaf(&t(vec![16], &neg));
    let ya = g.sigmoid(a);
    let yb = g.sigmoid(b);
    for (p, q) in g.value(ya).data().iter().zip(g.value(yb).data()) {
        assert!((p + q - 1.0).abs() < 1e-15);
        assert!(*p > 0.0 && *p < 1.0);
    }
}

#[test]
fn sigmoid_gradient_matches_finite_differences() {
    let x = t(vec![8], &seeded_values(8, 47));
    let err = grad_check(
        |g, vars| {
            let y = g.sigmoid(vars[0]);
            Ok(g.sum(y))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-9, "max relative error {err}");
}

#[test]
fn backward_of_linear_map_gives_constant_factor() {
    let x_data = seeded_values(6, 53);
    let w = Tensor::param(vec![6], vec![0.5f64; 6]).unwrap();
    let x = t(vec![6], &x_data);
    let mut g = Graph::new();
    let wv = g.leaf(&w);
    let xv = g.leaf(&x);
    let prod = g.mul(wv, xv).unwrap();
    let s = g.sum(prod);
    g.backward(s).unwrap();
    assert_close(&w.grad().unwrap(), &x_data, 0.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::<f64>::zeros([1, 1, 2, 2]));
    let y = g.relu(x);
    assert!(g.backward(y).is_err());
}

#[test]
fn backward_accumulates_and_reset_restores() {
    let w = Tensor::param(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
    let x = t(vec![3], &[4.0, 5.0, 6.0]);

    let run = |w: &Tensor<f64>| {
        let mut g = Graph::new();
        let wv = g.leaf(w);
        let xv = g.leaf(&x);
        let prod = g.mul(wv, xv).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
    };

    run(&w);
    let first = w.grad().unwrap();
    run(&w); // no reset: accumulates
    let doubled = w.grad().unwrap();
    assert_close(&doubled, &first.iter().map(|v| v * 2.0).collect::<Vec<_>>(), 0.0);

    w.zero_grad();
    run(&w);
    assert_close(&w.grad().unwrap(), &first, 0.0);
}

#[test]
fn grad_check_sum_of_squares_is_exact() {
    let x = t(vec![5], &[0.5, -1.25, 2.0, 0.75, -0.3]);
    let err = grad_check(
        |g, vars| {
            let sq = g.mul(vars[0], vars[0])?;
            Ok(g.sum(sq))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "max relative error {err}");
}

#[test]
fn grad_check_constant_function_is_zero_error() {
    let x = t(vec![4], &[1.0, -2.0, 0.5, 3.0]);
    let c = t(vec![4], &[2.0; 4]);
    let err = grad_check(
        |g, vars| {
            let _ = vars[0];
            let cv = g.leaf(&c);
            Ok(g.sum(cv))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_conv_relu_pool_composite() {
    let x = t([1, 1, 4, 4], &seeded_values(16, 59));
    let w = t([2, 1, 3, 3], &seeded_values(18, 61));
    let b = t(vec![2], &[0.1, -0.4]);
    let err = grad_check(
        |g, vars| {
            let c = g.conv2d(vars[0], vars[1], vars[2])?;
            let r = g.relu(c);
            let p = g.maxpool2(r)?;
            Ok(g.sum(p))
        },
        &[x, w, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn forward_outputs_are_deterministic_and_finite() {
    let x = t([1, 2, 8, 8], &seeded_values(128, 67));
    let w = t([3, 2, 3, 3], &seeded_values(54, 71));
    let b = t(vec![3], &[0.0, 0.1, -0.1]);
    let run = || {
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let wv = g.leaf(&w);
        let bv = g.leaf(&b);
        let c = g.conv2d(xv, wv, bv).unwrap();
        let r = g.relu(c);
        let p = g.maxpool2(r).unwrap();
        let u = g.upsample(p, 2).unwrap();
        let s = g.softmax_channels(u).unwrap();
        g.value(s).data().to_vec()
    };
    let a = run();
    let b2 = run();
    assert_eq!(a, b2, "bitwise repeatability");
    assert!(a.iter().all(|v| v.is_finite()));
}

/// Deterministic pseudo-random values in [-1, 1] for frozen test inputs.
fn seeded_values(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    (0..n)
        .map(|_| {
            // xorshift64*
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            let r = state.wrapping_mul(0x2545f4914f6cdd1d);
            (r >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}
