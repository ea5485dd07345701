use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xreg_autograd::{
    finite_diff_check, Activation, AutogradError, Graph, Reduction, Result, Tensor, Var,
};

fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values kept at least `margin` away from zero, for kinked ops.
fn random_off_kink(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.random_range(-1.0..1.0);
        if v.abs() > margin {
            break v;
        }
    })
}

/// `sum(r * y)` for a fixed random `r`, so every output element gets a
/// distinct upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, g.shape(y));
    let r = g.constant(r)?;
    let p = g.mul(y, r)?;
    g.reduce(p, Reduction::Sum)
}

const STEP: f64 = 1e-3;

fn assert_grad_ok(name: &str, report: xreg_autograd::GradCheckReport) {
    assert!(
        report.passes(1e-3, 1e-5),
        "{name}: rel {:.3e} abs@0 {:.3e} worst {:?}",
        report.max_relative_error,
        report.max_abs_error_at_zero,
        report.worst
    );
}

#[test]
fn conv_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3])).unwrap();
    let w = g.constant(Tensor::ones(&[1, 1, 2, 2])).unwrap();
    let y = g.conv(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &Tensor::full(&[1, 1, 2, 2], 4.0));

    let x = g.constant(t32(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let w = g.constant(t32(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let y = g.conv(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random(&mut rng, &[2, 1, 5, 4]).cast::<f32>();
    let x = g.constant(img.clone()).unwrap();
    let w = g.constant(t32(&[1, 1, 1, 1], &[1.0])).unwrap();
    let b = g.constant(t32(&[1], &[0.0])).unwrap();
    let y = g.conv(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), &img);
}

#[test]
fn conv_output_extent_and_errors() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 9, 8])).unwrap();
    let w = g.constant(Tensor::zeros(&[3, 2, 3, 3])).unwrap();
    let y = g.conv(x, w, None, 2, 1).unwrap();
    // floor((s + 2p - k) / stride) + 1
    assert_eq!(g.shape(y), &[1, 3, 5, 4]);

    let x3 = g.constant(Tensor::zeros(&[1, 1, 4, 4, 4])).unwrap();
    let w3 = g.constant(Tensor::zeros(&[2, 1, 3, 3, 3])).unwrap();
    let y3 = g.conv(x3, w3, None, 2, 1).unwrap();
    assert_eq!(g.shape(y3), &[1, 2, 2, 2, 2]);

    let flat = g.constant(Tensor::zeros(&[1, 1, 4])).unwrap();
    let w1 = g.constant(Tensor::zeros(&[1, 1, 3])).unwrap();
    assert!(matches!(g.conv(flat, w1, None, 1, 0), Err(AutogradError::UnsupportedRank { .. })));
    let wrong_c = g.constant(Tensor::zeros(&[1, 3, 3, 3])).unwrap();
    assert!(matches!(g.conv(x, wrong_c, None, 1, 0), Err(AutogradError::ShapeMismatch { .. })));
    let big = g.constant(Tensor::zeros(&[1, 2, 11, 11])).unwrap();
    assert!(g.conv(x, big, None, 1, 0).is_err());
}

#[test]
fn upsample_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t32(&[1, 1, 1, 2], &[0.0, 2.0])).unwrap();
    let y = g.upsample_linear(x, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 4]);
    assert_eq!(&g.value(y).data()[..4], &[0.0, 0.5, 1.5, 2.0]);

    let same = g.upsample_linear(x, 1).unwrap();
    assert_eq!(g.value(same), g.value(x));

    let c = g.constant(Tensor::full(&[1, 2, 3, 3, 2], 0.7)).unwrap();
    let up = g.upsample_linear(c, 3).unwrap();
    assert_eq!(g.shape(up), &[1, 2, 9, 9, 6]);
    assert!(g.value(up).data().iter().all(|&v| (v - 0.7).abs() < 1e-6));

    assert!(g.upsample_linear(x, 0).is_err());
}

#[test]
fn linear_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t32(&[1, 2], &[1.0, 2.0])).unwrap();
    let w = g.constant(t32(&[1, 2], &[3.0, 4.0])).unwrap();
    let b = g.constant(t32(&[1], &[5.0])).unwrap();
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[16.0]);

    let x = g.constant(t32(&[2, 2], &[1.0, -2.0, 0.5, 4.0])).unwrap();
    let eye = g.constant(t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let zero = g.constant(Tensor::zeros(&[2])).unwrap();
    let y = g.linear(x, eye, Some(zero)).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let z = g.constant(Tensor::zeros(&[3, 2])).unwrap();
    let b2 = g.constant(t32(&[2], &[0.25, -1.0])).unwrap();
    let y = g.linear(z, eye, Some(b2)).unwrap();
    assert_eq!(g.value(y).data(), &[0.25, -1.0, 0.25, -1.0, 0.25, -1.0]);

    let bad = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    assert!(g.linear(bad, w, None).is_err());
}

#[test]
fn activation_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t32(&[3], &[-3.0, -2.0, 0.0])).unwrap();
    let r = g.activation(x, Activation::Relu).unwrap();
    assert_eq!(g.value(r).data()[0], 0.0);
    let l = g.activation(x, Activation::LeakyRelu(0.2)).unwrap();
    assert!((g.value(l).data()[1] + 0.4).abs() < 1e-7);
    let s = g.activation(x, Activation::Sigmoid).unwrap();
    assert_eq!(g.value(s).data()[2], 0.5);
    assert!(g.activation(x, Activation::LeakyRelu(1.5)).is_err());
}

#[test]
fn instance_norm_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 3.0]).unwrap()).unwrap();
    let y = g.instance_norm(x, 1e-12).unwrap();
    let v = g.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

    let unit = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![-1.0, 1.0, -1.0, 1.0]).unwrap()).unwrap();
    let y = g.instance_norm(unit, 1e-10).unwrap();
    assert!(g.value(y).max_abs_diff(g.value(unit)).unwrap() < 1e-8);

    let c = g.constant(Tensor::full(&[1, 2, 3, 3], 4.0)).unwrap();
    let y = g.instance_norm(c, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let single = g.constant(Tensor::zeros(&[1, 1, 1, 1])).unwrap();
    assert!(g.instance_norm(single, 1e-5).is_err());
}

#[test]
fn reduce_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t32(&[3], &[1.0, 2.0, 3.0])).unwrap();
    let s = g.reduce(x, Reduction::Sum).unwrap();
    assert_eq!(g.value(s).item().unwrap(), 6.0);
    let y = g.constant(t32(&[2], &[-1.0, 3.0])).unwrap();
    let l1 = g.reduce(y, Reduction::L1).unwrap();
    assert_eq!(g.value(l1).item().unwrap(), 2.0);
    let z = g.constant(t32(&[2], &[2.0, -2.0])).unwrap();
    let ss = g.reduce(z, Reduction::SumSq).unwrap();
    assert_eq!(g.value(ss).item().unwrap(), 8.0);
    let empty = g.constant(Tensor::zeros(&[0])).unwrap();
    assert!(matches!(g.reduce(empty, Reduction::Sum), Err(AutogradError::Empty { .. })));
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.variable(Tensor::from_fn(&[2, 3], |i| i as f32 - 2.0)).unwrap();
    let s = g.reduce(x, Reduction::Sum).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), Tensor::ones(&[2, 3]));

    let mut g = Graph::<f32>::new();
    let x = g.variable(t32(&[2], &[1.0, 2.0])).unwrap();
    let s = g.reduce(x, Reduction::SumSq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);

    let mut g = Graph::<f32>::new();
    let x = g.variable(t32(&[2], &[-1.0, 5.0])).unwrap();
    let r = g.activation(x, Activation::Relu).unwrap();
    let s = g.reduce(r, Reduction::Sum).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f32>::new();
    let x = g.variable(t32(&[2], &[1.0, 2.0])).unwrap();
    assert!(matches!(g.backward(x), Err(AutogradError::NotScalar(_))));

    let mut other = Graph::<f32>::new();
    let y = other.variable(Tensor::scalar(1.0)).unwrap();
    assert!(matches!(g.backward(y), Err(AutogradError::ForeignVar)));

    let s = g.reduce(x, Reduction::Sum).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(AutogradError::BackwardAlreadyRun)));
    assert!(g.scale(x, 2.0).is_err());
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::<f32>::new();
    assert!(matches!(g.constant(t32(&[1], &[f32::NAN])), Err(AutogradError::NonFinite { .. })));
    let x = g.constant(t32(&[1], &[1e30])).unwrap();
    assert!(matches!(g.mul(x, x), Err(AutogradError::NonFinite { op: "mul" })));
}

#[test]
fn reuse_accumulates_branch_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
    let a = g.reduce(x, Reduction::SumSq).unwrap();
    let b = g.scale(x, 3.0).unwrap();
    let b = g.reduce(b, Reduction::Sum).unwrap();
    let s = g.add(a, b).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 1.0, 7.0]);
}

#[test]
fn finite_diff_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[3, 4]);
    let sum = finite_diff_check(|g, v| g.reduce(v[0], Reduction::Sum), std::slice::from_ref(&x), STEP).unwrap();
    assert!(sum.max_relative_error < 1e-9);
    let sq = finite_diff_check(|g, v| g.reduce(v[0], Reduction::SumSq), std::slice::from_ref(&x), STEP).unwrap();
    assert_grad_ok("sumsq", sq);
    let w = random(&mut rng, &[2, 3, 2, 2]);
    let img = random(&mut rng, &[1, 3, 4, 3]);
    let conv = finite_diff_check(
        |g, v| {
            let y = g.conv(v[0], v[1], None, 1, 1)?;
            g.reduce(y, Reduction::Sum)
        },
        &[img, w],
        STEP,
    )
    .unwrap();
    assert_grad_ok("sum(conv)", conv);

    let not_scalar = finite_diff_check(|_, v| Ok(v[0]), &[x], STEP);
    assert!(matches!(not_scalar, Err(AutogradError::NotScalar(_))));
}

#[test]
fn gradients_of_every_op_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..3u64 {
        let x4 = random(&mut rng, &[2, 3, 4, 5]);
        let w4 = random(&mut rng, &[2, 3, 3, 3]);
        let b4 = random(&mut rng, &[2]);
        let r = finite_diff_check(
            |g, v| {
                let y = g.conv(v[0], v[1], Some(v[2]), 2, 1)?;
                project(g, y, seed)
            },
            &[x4.clone(), w4, b4],
            STEP,
        )
        .unwrap();
        assert_grad_ok("conv2d", r);

        let x5 = random(&mut rng, &[1, 2, 3, 4, 3]);
        let w5 = random(&mut rng, &[2, 2, 2, 3, 2]);
        let r = finite_diff_check(
            |g, v| {
                let y = g.conv(v[0], v[1], None, 1, 1)?;
                project(g, y, seed)
            },
            &[x5.clone(), w5],
            STEP,
        )
        .unwrap();
        assert_grad_ok("conv3d", r);

        for (name, x) in [("upsample2d", x4.clone()), ("upsample3d", x5.clone())] {
            let r = finite_diff_check(
                |g, v| {
                    let y = g.upsample_linear(v[0], 2)?;
                    project(g, y, seed)
                },
                &[x],
                STEP,
            )
            .unwrap();
            assert_grad_ok(name, r);
        }

        let r = finite_diff_check(
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                project(g, y, seed)
            },
            &[random(&mut rng, &[3, 4]), random(&mut rng, &[2, 4]), random(&mut rng, &[2])],
            STEP,
        )
        .unwrap();
        assert_grad_ok("linear", r);

        for kind in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Sigmoid, Activation::Tanh] {
            let r = finite_diff_check(
                |g, v| {
                    let y = g.activation(v[0], kind)?;
                    project(g, y, seed)
                },
                &[random_off_kink(&mut rng, &[2, 6], 0.01)],
                STEP,
            )
            .unwrap();
            assert_grad_ok(&format!("{kind:?}"), r);
        }

        let r = finite_diff_check(
            |g, v| {
                let y = g.instance_norm(v[0], 1e-5)?;
                project(g, y, seed)
            },
            std::slice::from_ref(&x4),
            STEP,
        )
        .unwrap();
        assert_grad_ok("instance_norm", r);

        for kind in [Reduction::Sum, Reduction::Mean, Reduction::L1, Reduction::SumSq] {
            let r = finite_diff_check(|g, v| g.reduce(v[0], kind), &[random_off_kink(&mut rng, &[7], 0.01)], STEP).unwrap();
            assert_grad_ok(&format!("{kind:?}"), r);
        }

        let a = random(&mut rng, &[2, 3]);
        let b = random(&mut rng, &[2, 3]);
        let r = finite_diff_check(
            |g, v| {
                let s = g.add(v[0], v[1])?;
                let d = g.sub(s, v[1])?;
                let m = g.mul(d, v[1])?;
                let k = g.scale(m, -1.5)?;
                let k = g.add_scalar(k, 0.25)?;
                project(g, k, seed)
            },
            &[a, b],
            STEP,
        )
        .unwrap();
        assert_grad_ok("elementwise", r);

        let r = finite_diff_check(
            |g, v| {
                let c = g.concat(&[v[0], v[1]], 1)?;
                let n = g.narrow(c, 1, 1, 3)?;
                let n = g.narrow(n, 3, 2, 2)?;
                let s = g.reshape(n, &[2, 3, 2, 4])?;
                let m = g.spatial_mean(s)?;
                project(g, m, seed)
            },
            &[random(&mut rng, &[2, 2, 4, 5]), random(&mut rng, &[2, 2, 4, 5])],
            STEP,
        )
        .unwrap();
        assert_grad_ok("concat/narrow/reshape/mean", r);

        let r = finite_diff_check(
            |g, v| {
                let y = g.affine_points(v[0], v[1])?;
                project(g, y, seed)
            },
            &[random(&mut rng, &[2, 2, 3]), random(&mut rng, &[2, 2, 3, 4])],
            STEP,
        )
        .unwrap();
        assert_grad_ok("affine_points", r);
    }
}

/// Grid values whose continuous sample index stays at least `margin` away
/// from integer positions and from the clamp boundary.
fn grid_off_cells(rng: &mut ChaCha8Rng, batch: usize, dims: &[usize], out: &[usize], margin: f64) -> Tensor<f64> {
    let plane: usize = out.iter().product();
    let mut shape = vec![batch, dims.len()];
    shape.extend_from_slice(out);
    let mut data = Vec::new();
    for _ in 0..batch {
        for &n in dims {
            for _ in 0..plane {
                let x = loop {
                    let x: f64 = rng.random_range(0.0..(n - 1) as f64);
                    let f = x - x.floor();
                    if f > margin && f < 1.0 - margin {
                        break x;
                    }
                };
                data.push((2.0 * x + 1.0) / n as f64 - 1.0);
            }
        }
    }
    Tensor::new(shape, data).unwrap()
}

#[test]
fn grid_sample_gradients_away_from_cell_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..3u64 {
        let img = random(&mut rng, &[2, 2, 5, 6]);
        let grid = grid_off_cells(&mut rng, 2, &[5, 6], &[3, 4], 0.02);
        let r = finite_diff_check(
            |g, v| {
                let y = g.grid_sample(v[0], v[1])?;
                project(g, y, seed)
            },
            &[img, grid],
            STEP,
        )
        .unwrap();
        assert_grad_ok("grid_sample2d", r);

        let img = random(&mut rng, &[1, 2, 4, 5, 3]);
        let grid = grid_off_cells(&mut rng, 1, &[4, 5, 3], &[2, 3, 2], 0.02);
        let r = finite_diff_check(
            |g, v| {
                let y = g.grid_sample(v[0], v[1])?;
                project(g, y, seed)
            },
            &[img, grid],
            STEP,
        )
        .unwrap();
        assert_grad_ok("grid_sample3d", r);
    }
}

#[test]
fn backward_is_linear_in_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[1, 2, 4, 4]).cast::<f32>();
    let w = random(&mut rng, &[3, 2, 3, 3]).cast::<f32>();
    let grad_of = |a: f64, b: f64| {
        let mut g = Graph::<f32>::new();
        let xv = g.variable(x.clone()).unwrap();
        let wv = g.constant(w.clone()).unwrap();
        let y = g.conv(xv, wv, None, 1, 1).unwrap();
        let f = g.reduce(y, Reduction::SumSq).unwrap();
        let t = g.activation(y, Activation::Tanh).unwrap();
        let h = g.reduce(t, Reduction::Sum).unwrap();
        let fa = g.scale(f, a).unwrap();
        let hb = g.scale(h, b).unwrap();
        let root = g.add(fa, hb).unwrap();
        g.backward(root).unwrap();
        g.grad(xv).unwrap()
    };
    let gf = grad_of(1.0, 0.0);
    let gh = grad_of(0.0, 1.0);
    let combined = grad_of(0.3, -2.0);
    for ((c, f), h) in combined.data().iter().zip(gf.data()).zip(gh.data()) {
        let expect = 0.3 * *f as f64 - 2.0 * *h as f64;
        assert!((*c as f64 - expect).abs() <= 1e-6 * (1.0 + expect.abs()), "{c} vs {expect}");
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random(&mut rng, &[2, 1, 8, 8]).cast::<f32>();
        let w = random(&mut rng, &[4, 1, 3, 3]).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let xv = g.variable(x).unwrap();
        let wv = g.variable(w).unwrap();
        let y = g.conv(xv, wv, None, 2, 1).unwrap();
        let y = g.instance_norm(y, 1e-5).unwrap();
        let y = g.upsample_linear(y, 2).unwrap();
        let s = g.reduce(y, Reduction::SumSq).unwrap();
        g.backward(s).unwrap();
        (g.value(y).clone(), g.grad(xv).unwrap(), g.grad(wv).unwrap())
    };
    assert_eq!(run(), run());
}
