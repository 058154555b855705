use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
}

fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Max relative error between the tape gradient and central differences
/// for every element of every input.
fn gradcheck(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let h = 1e-5;
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<_> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().to_vec();
        for e in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[e];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Weighted sum so every output element carries a distinct upstream gradient.
fn probe(tape: &mut Tape<f64>, y: Var) -> Var {
    let dims = tape.dims(y).to_vec();
    let w = Tensor::from_fn(dims, |i| ((i as f64) * 0.37).sin() + 0.1);
    let w = tape.constant(w);
    let m = tape.mul(y, w).unwrap();
    tape.sum(m)
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);

    let z = tape.constant(Tensor::zeros([2, 3]));
    let out = tape.matmul(m, z).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

    let bad = tape.constant(Tensor::zeros([3, 3]));
    assert!(matches!(tape.matmul(m, bad), Err(Error::Shape(_))));
}

#[test]
fn conv_temporal_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let delta = tape.constant(t(&[1, 1, 1], &[1.0]));
    let out = tape.conv_temporal(x, delta, 1).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0]);

    let box2 = tape.constant(t(&[1, 1, 2], &[1.0, 1.0]));
    let out = tape.conv_temporal(x, box2, 1).unwrap();
    assert_eq!(tape.value(out).dims(), &[1, 2]);
    assert_eq!(tape.value(out).data(), &[3.0, 5.0]);

    let zero = tape.constant(Tensor::zeros([2, 1, 2]));
    let out = tape.conv_temporal(x, zero, 1).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

    let wide = tape.constant(Tensor::zeros([1, 1, 4]));
    assert!(matches!(tape.conv_temporal(x, wide, 1), Err(Error::Shape(_))));
}

#[test]
fn conv_temporal_stride_and_row_layout() {
    let mut tape = Tape::new();
    // two channels, two filters
    let x = tape.constant(t(&[2, 5], &[1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0]));
    let k = tape.constant(t(&[2, 1, 1], &[1.0, -1.0]));
    let out = tape.conv_temporal(x, k, 2).unwrap();
    assert_eq!(tape.value(out).dims(), &[4, 3]);
    assert_eq!(
        tape.value(out).data(),
        &[1.0, 3.0, 5.0, 10.0, 30.0, 50.0, -1.0, -3.0, -5.0, -10.0, -30.0, -50.0]
    );
}

#[test]
fn conv_spatial_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3], &[4.0, 5.0, 6.0]));
    let k = tape.constant(t(&[1, 1, 1], &[1.0]));
    let out = tape.conv_spatial(x, k).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 5.0, 6.0]);

    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let k = tape.constant(t(&[1, 2, 1], &[1.0, 1.0]));
    let out = tape.conv_spatial(x, k).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 6.0]);

    let x = tape.constant(t(&[2, 2], &[7.0, 8.0, 7.0, 8.0]));
    let k = tape.constant(t(&[1, 2, 1], &[1.0, -1.0]));
    let out = tape.conv_spatial(x, k).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.0]);

    let k3 = tape.constant(Tensor::zeros([1, 3, 1]));
    assert!(matches!(tape.conv_spatial(x, k3), Err(Error::Shape(_))));
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let e = tape.elu(x);
    assert_eq!(tape.value(e).data()[1], 0.0);
    assert!((tape.value(e).data()[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);

    // clamps keep log and exp finite
    let z = tape.constant(t(&[2], &[0.0, -3.0]));
    let l = tape.log(z);
    assert!(tape.value(l).data().iter().all(|v| v.is_finite()));
    let big = tape.constant(t(&[1], &[1000.0]));
    let ex = tape.exp(big);
    assert_eq!(tape.value(ex).data()[0], 80f64.exp());
}

#[test]
fn tanh_derivative_at_zero() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::scalar(0.0));
    let y = tape.tanh(x);
    tape.backward(y).unwrap();
    assert!((tape.grad(x).unwrap()[0] - 1.0).abs() < 1e-12);

    let h: f64 = 1e-5;
    let fd = (h.tanh() - (-h).tanh()) / (2.0 * h);
    assert!((tape.grad(x).unwrap()[0] - fd).abs() < 1e-9);
}

#[test]
fn cosine_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[1, 2], &[1.0, 0.0]));
    let b = tape.constant(t(&[1, 2], &[0.0, 1.0]));
    let c = tape.constant(t(&[1, 2], &[1.0, 1.0]));
    let s = tape.cosine_similarity_matrix(a, a).unwrap();
    assert_eq!(tape.value(s).data(), &[1.0]);
    let s = tape.cosine_similarity_matrix(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[0.0]);
    let s = tape.cosine_similarity_matrix(c, a).unwrap();
    assert!((tape.value(s).data()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);

    let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
    assert!(matches!(tape.cosine_similarity_matrix(z, a), Err(Error::Degenerate(_))));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.5));
    tape.backward(x).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert!((tape.grad(x).unwrap()[0] - 6.0).abs() < 1e-12);
    let h = 1e-5;
    let fd = ((3.0 + h) * (3.0 + h) - (3.0 - h) * (3.0 - h)) / (2.0 * h);
    assert!((tape.grad(x).unwrap()[0] - fd).abs() < 1e-6);

    let mut tape = Tape::<f64>::new();
    let v = tape.param(Tensor::zeros([2]));
    assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(1.0));
    let unused = tape.param(Tensor::zeros([3]));
    let y = tape.scale(x, 2.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0; 3]);
    assert_eq!(tape.grad(x).unwrap(), &[2.0]);
}

#[test]
fn gradients_of_every_op_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-4;

    let err = gradcheck(&[random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], |tp, v| {
        let y = tp.matmul(v[0], v[1]).unwrap();
        probe(tp, y)
    });
    assert!(err < tol, "matmul {err}");

    let err = gradcheck(&[random(&[3, 4], &mut rng)], |tp, v| {
        let y = tp.transpose(v[0]).unwrap();
        probe(tp, y)
    });
    assert!(err < tol, "transpose {err}");

    let err = gradcheck(&[random(&[2, 3, 9], &mut rng), random(&[2, 1, 3], &mut rng)], |tp, v| {
        let y = tp.conv_temporal(v[0], v[1], 2).unwrap();
        probe(tp, y)
    });
    assert!(err < tol, "conv_temporal {err}");

    let err = gradcheck(&[random(&[2, 4, 5], &mut rng), random(&[4, 2, 1], &mut rng)], |tp, v| {
        let y = tp.conv_spatial_grouped(v[0], v[1], 2).unwrap();
        probe(tp, y)
    });
    assert!(err < tol, "conv_spatial {err}");

    let err = gradcheck(
        &[random(&[2, 3, 4], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)],
        |tp, v| {
            let y = tp.channel_affine(v[0], v[1], v[2], 1).unwrap();
            let b = tp.add_bias(y, v[2], 1).unwrap();
            probe(tp, b)
        },
    );
    assert!(err < tol, "affine {err}");

    let err = gradcheck(&[random(&[2, 3, 7], &mut rng)], |tp, v| {
        let y = tp.avg_pool_time(v[0], 3).unwrap();
        let y = tp.reshape(y, &[12]).unwrap();
        probe(tp, y)
    });
    assert!(err < tol, "pool {err}");

    for kind in [Unary::Elu, Unary::Tanh, Unary::Negate, Unary::Scale(1.7), Unary::Exp] {
        let err = gradcheck(&[random(&[5], &mut rng)], |tp, v| {
            let y = tp.unary(v[0], kind);
            probe(tp, y)
        });
        assert!(err < tol, "{kind:?} {err}");
    }
    let positive = random(&[5], &mut rng).map(|v| v.abs() + 0.1);
    let err = gradcheck(&[positive], |tp, v| {
        let y = tp.log(v[0]);
        probe(tp, y)
    });
    assert!(err < tol, "log {err}");
    // relu away from the kink
    let away = random(&[6], &mut rng).map(|v| if v.abs() < 0.05 { 0.5 } else { v });
    let err = gradcheck(&[away], |tp, v| {
        let y = tp.relu(v[0]);
        probe(tp, y)
    });
    assert!(err < tol, "relu {err}");

    let err = gradcheck(&[random(&[4], &mut rng), random(&[4], &mut rng)], |tp, v| {
        let a = tp.add(v[0], v[1]).unwrap();
        let s = tp.sub(a, v[1]).unwrap();
        let m = tp.mul(s, v[1]).unwrap();
        probe(tp, m)
    });
    assert!(err < tol, "binary {err}");

    let err = gradcheck(&[random(&[3, 4], &mut rng), random(&[5, 4], &mut rng)], |tp, v| {
        let y = tp.cosine_similarity_matrix(v[0], v[1]).unwrap();
        probe(tp, y)
    });
    assert!(err < tol, "cosine {err}");

    for axis in [0, 1] {
        let err = gradcheck(&[random(&[3, 4], &mut rng)], |tp, v| {
            let y = tp.log_softmax(v[0], axis).unwrap();
            probe(tp, y)
        });
        assert!(err < tol, "log_softmax axis {axis} {err}");
    }

    let err = gradcheck(&[random(&[3, 3], &mut rng)], |tp, v| {
        let e = tp.exp(v[0]);
        tp.trace(e).unwrap()
    });
    assert!(err < tol, "trace {err}");
}

#[test]
fn batched_conv_matches_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 2, 8], &mut rng);
    let k = random(&[2, 1, 3], &mut rng);
    let mut tape = Tape::new();
    let xb = tape.constant(x.clone());
    let kv = tape.constant(k);
    let yb = tape.conv_temporal(xb, kv, 1).unwrap();
    for b in 0..3 {
        let xs = tape.constant(x.index_outer(b));
        let ys = tape.conv_temporal(xs, kv, 1).unwrap();
        assert_eq!(tape.value(ys).data(), tape.value(yb).row(b));
    }
}

proptest! {
    #[test]
    fn cosine_is_bounded_and_transposes(
        w in prop::collection::vec(-1.0f64..1.0, 12),
        v in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        prop_assume!(w.chunks(4).all(|r| r.iter().any(|x| x.abs() > 1e-3)));
        prop_assume!(v.chunks(4).all(|r| r.iter().any(|x| x.abs() > 1e-3)));
        let mut tape = Tape::new();
        let wv = tape.constant(t(&[3, 4], &w));
        let vv = tape.constant(t(&[2, 4], &v));
        let s = tape.cosine_similarity_matrix(wv, vv).unwrap();
        let st = tape.cosine_similarity_matrix(vv, wv).unwrap();
        let (s, st) = (tape.value(s).data().to_vec(), tape.value(st).data().to_vec());
        for i in 0..3 {
            for j in 0..2 {
                prop_assert!(s[i * 2 + j].abs() <= 1.0);
                prop_assert_eq!(s[i * 2 + j], st[j * 3 + i]);
            }
        }
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let x = tape.constant(random(&[2, 3, 10], &mut rng));
            let k = tape.param(random(&[2, 1, 4], &mut rng));
            let y = tape.conv_temporal(x, k, 1).unwrap();
            let y = tape.elu(y);
            let s = tape.sum(y);
            tape.backward(s).unwrap();
            (tape.value(s).data().to_vec(), tape.grad(k).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
        prop_assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
