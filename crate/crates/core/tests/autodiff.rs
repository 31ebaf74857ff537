use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survgen::autodiff::{grad_check, AutodiffError, Graph, Tensor, Var};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Scalarises any tensor with fixed random weights so every output entry matters.
fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(v).to_vec();
    let w = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(v, w)?;
    g.sum(p)
}

fn check_unary(name: &str, lo: f64, hi: f64, op: fn(&mut Graph, Var) -> Result<Var, AutodiffError>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..100u64 {
        let rows = rng.random_range(1..4);
        let cols = rng.random_range(1..5);
        let theta = random_tensor(&mut rng, &[rows, cols], lo, hi);
        let err = grad_check(
            |g, p| {
                let y = op(g, p)?;
                weighted_sum(g, y, seed)
            },
            &theta,
            H,
        )
        .unwrap();
        assert!(err < TOL, "{name}: seed {seed} shape {rows}x{cols} rel err {err}");
    }
}

#[test]
fn elementwise_unary_gradients() {
    check_unary("exp", -2.0, 2.0, |g, a| g.exp(a));
    check_unary("ln", 0.2, 3.0, |g, a| g.ln(a));
    check_unary("neg", -2.0, 2.0, |g, a| g.neg(a));
    check_unary("sigmoid", -3.0, 3.0, |g, a| g.sigmoid(a));
    check_unary("softplus", -3.0, 3.0, |g, a| g.softplus(a));
    check_unary("tanh", -2.0, 2.0, |g, a| g.tanh(a));
    check_unary("recip", 0.5, 3.0, |g, a| g.recip(a));
    check_unary("square", -2.0, 2.0, |g, a| g.square(a));
    check_unary("scale", -2.0, 2.0, |g, a| g.scale(a, -1.7));
    check_unary("add_scalar", -2.0, 2.0, |g, a| g.add_scalar(a, 0.3));
    check_unary("clamp interior", 0.1, 0.9, |g, a| g.clamp(a, 0.0, 1.0));
}

#[test]
fn normalisation_and_scan_gradients() {
    check_unary("softmax", -2.0, 2.0, |g, a| g.softmax(a));
    check_unary("softmin", -2.0, 2.0, |g, a| g.softmin(a));
    check_unary("normalize", 0.1, 2.0, |g, a| g.normalize(a));
    check_unary("cumsum", -2.0, 2.0, |g, a| g.cumsum(a));
    check_unary("cumprod", -1.5, 1.5, |g, a| g.cumprod(a));
    check_unary("sum_last", -2.0, 2.0, |g, a| g.sum_last(a));
    check_unary("sq_norm", -2.0, 2.0, |g, a| g.sq_norm(a));
    check_unary("sum", -2.0, 2.0, |g, a| g.sum(a));
    check_unary("mean", -2.0, 2.0, |g, a| g.mean(a));
    check_unary("transpose", -2.0, 2.0, |g, a| g.transpose(a));
    check_unary("repeat_rows", -2.0, 2.0, |g, a| g.repeat_rows(a, 3));
    check_unary("sum_groups", -2.0, 2.0, |g, a| {
        let cols = g.shape(a)[1];
        let sizes = if cols > 1 { vec![1, cols - 1] } else { vec![1] };
        g.sum_groups(a, &sizes)
    });
}

#[test]
fn sum_groups_example_and_bad_partition() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap());
    let y = g.sum_groups(x, &[1, 3]).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 9.0, 5.0, 21.0]);
    assert!(g.sum_groups(x, &[2, 3]).is_err());
}

#[test]
fn structural_gradients() {
    check_unary("slice", -2.0, 2.0, |g, a| {
        let cols = g.shape(a)[1];
        g.slice(a, 1, cols / 2, cols - cols / 2)
    });
    check_unary("concat", -2.0, 2.0, |g, a| {
        let sq = g.square(a)?;
        g.concat(&[a, sq, a], 1)
    });
    check_unary("gather_rows", -2.0, 2.0, |g, a| {
        let rows = g.shape(a)[0];
        let idx: Vec<usize> = (0..2 * rows).map(|i| (i * 7) % rows).collect();
        g.gather_rows(a, &idx)
    });
    check_unary("reshape", -2.0, 2.0, |g, a| {
        let n = g.value(a).len();
        g.reshape(a, &[n])
    });
    check_unary("broadcast_to", -2.0, 2.0, |g, a| {
        let s = g.shape(a).to_vec();
        let r = g.reshape(a, &[1, s[0], s[1]])?;
        g.broadcast_to(r, &[3, s[0], s[1]])
    });
}

#[test]
fn cumprod_gradient_is_exact_through_zero_factor() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![2.0, 0.0, 3.0, 4.0]));
    let y = g.cumprod(x).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 0.0, 0.0, 0.0]);
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    // d/dx_2 of (x1 + x1x2 + x1x2x3 + x1x2x3x4) at x2 = 0 is x1 (1 + x3 + x3x4) = 2 * 16.
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 32.0, 0.0, 0.0]);
}

type BinaryOp = fn(&mut Graph, Var, Var) -> Result<Var, AutodiffError>;

#[test]
fn broadcasting_binary_gradients() {
    let ops: [(&str, BinaryOp); 4] = [
        ("add", |g, a, b| g.add(a, b)),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
        ("div", |g, a, b| g.div(a, b)),
    ];
    let shape_pairs: [(&[usize], &[usize]); 5] = [
        (&[3, 4], &[3, 4]),
        (&[3, 4], &[1, 4]),
        (&[3, 4], &[3, 1]),
        (&[2, 3, 4], &[4]),
        (&[2, 1, 4], &[1, 3, 1]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, op) in ops {
        for (seed, (sa, sb)) in shape_pairs.iter().enumerate() {
            let a = random_tensor(&mut rng, sa, 0.5, 2.0);
            let b = random_tensor(&mut rng, sb, 0.5, 2.0);
            let b_fixed = b.clone();
            let err_a = grad_check(
                |g, p| {
                    let bb = g.constant(b_fixed.clone());
                    let y = op(g, p, bb)?;
                    weighted_sum(g, y, seed as u64)
                },
                &a,
                H,
            )
            .unwrap();
            let a_fixed = a.clone();
            let err_b = grad_check(
                |g, p| {
                    let aa = g.constant(a_fixed.clone());
                    let y = op(g, aa, p)?;
                    weighted_sum(g, y, seed as u64)
                },
                &b,
                H,
            )
            .unwrap();
            assert!(err_a < TOL && err_b < TOL, "{name} {sa:?} {sb:?}: {err_a} {err_b}");
        }
    }
}

#[test]
fn matmul_gradients_all_transpose_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..40u64 {
        let (m, k, n) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let ta = seed % 2 == 1;
        let tb = (seed / 2) % 2 == 1;
        let a_shape = if ta { [k, m] } else { [m, k] };
        let b_shape = if tb { [n, k] } else { [k, n] };
        let a = random_tensor(&mut rng, &a_shape, -1.0, 1.0);
        let b = random_tensor(&mut rng, &b_shape, -1.0, 1.0);
        let (a2, b2) = (a.clone(), b.clone());
        let err_a = grad_check(
            |g, p| {
                let bb = g.constant(b2.clone());
                let y = g.matmul_t(p, bb, ta, tb)?;
                weighted_sum(g, y, seed)
            },
            &a,
            H,
        )
        .unwrap();
        let err_b = grad_check(
            |g, p| {
                let aa = g.constant(a2.clone());
                let y = g.matmul_t(aa, p, ta, tb)?;
                weighted_sum(g, y, seed)
            },
            &b,
            H,
        )
        .unwrap();
        assert!(err_a < TOL && err_b < TOL, "ta={ta} tb={tb}: {err_a} {err_b}");

        let batch = 3;
        let ba = random_tensor(&mut rng, &[batch, a_shape[0], a_shape[1]], -1.0, 1.0);
        let bb = random_tensor(&mut rng, &[batch, b_shape[0], b_shape[1]], -1.0, 1.0);
        let bb2 = bb.clone();
        let err = grad_check(
            |g, p| {
                let c = g.constant(bb2.clone());
                let y = g.batch_matmul(p, c, ta, tb)?;
                weighted_sum(g, y, seed)
            },
            &ba,
            H,
        )
        .unwrap();
        let ba2 = ba.clone();
        let err2 = grad_check(
            |g, p| {
                let c = g.constant(ba2.clone());
                let y = g.batch_matmul(c, p, ta, tb)?;
                weighted_sum(g, y, seed)
            },
            &bb,
            H,
        )
        .unwrap();
        assert!(err < TOL && err2 < TOL, "batched ta={ta} tb={tb}: {err} {err2}");
    }
}

#[test]
fn matmul_forward_matches_naive_product() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let b = g.constant(Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
    let ct = g.matmul_t(b, a, true, true).unwrap();
    assert_eq!(g.value(ct).data(), &[58., 139., 64., 154.]);
}

#[test]
fn sq_dist_pairs_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..30u64 {
        let d = if seed % 3 == 0 { 20 } else { rng.random_range(1..6) };
        let a = random_tensor(&mut rng, &[3, d], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[4, d], -1.0, 1.0);
        let b2 = b.clone();
        let err = grad_check(
            |g, p| {
                let c = g.constant(b2.clone());
                let y = g.sq_dist_pairs(p, c)?;
                weighted_sum(g, y, seed)
            },
            &a,
            H,
        )
        .unwrap();
        let a2 = a.clone();
        let err2 = grad_check(
            |g, p| {
                let c = g.constant(a2.clone());
                let y = g.sq_dist_pairs(c, p)?;
                weighted_sum(g, y, seed)
            },
            &b,
            H,
        )
        .unwrap();
        assert!(err < TOL && err2 < TOL, "d={d}: {err} {err2}");
    }
}

#[test]
fn primitive_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let s = g.softmax(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let smin = g.softmin(x).unwrap();
    let nx = g.neg(x).unwrap();
    let smax = g.softmax(nx).unwrap();
    for (a, b) in g.value(smin).data().iter().zip(g.value(smax).data()) {
        assert!((a - b).abs() < 1e-15);
    }

    let c = g.constant(Tensor::vector(vec![1.0, 0.5, 0.5]));
    let cp = g.cumprod(c).unwrap();
    assert_eq!(g.value(cp).data(), &[1.0, 0.5, 0.25]);
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![1.0, 2.0]));
    let sq = g.mul(w, w).unwrap();
    let l = g.sum(sq).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 0.25);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.exp(x).unwrap();
    assert!(matches!(
        g.backward(y),
        Err(AutodiffError::NonScalarRoot { .. })
    ));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0]));
    assert_eq!(g.ln(x), Err(AutodiffError::NonFinite { op: "ln" }));
    let big = g.constant(Tensor::vector(vec![1000.0]));
    assert!(g.exp(big).is_err());
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 2]));
    let err = g.add(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "add",
            lhs: vec![2, 3],
            rhs: vec![4, 2]
        }
    );
    assert!(err.to_string().contains("add"));
    assert!(g.matmul(a, a).is_err());
}

fn two_layer_net_loss(g: &mut Graph, theta: Var, x: &Tensor) -> Result<Var, AutodiffError> {
    // theta packs W1 [3x4] | b1 [4] | W2 [4x1]
    let w1 = g.slice(theta, 0, 0, 12)?;
    let w1 = g.reshape(w1, &[3, 4])?;
    let b1 = g.slice(theta, 0, 12, 4)?;
    let w2 = g.slice(theta, 0, 16, 4)?;
    let w2 = g.reshape(w2, &[4, 1])?;
    let xi = g.constant(x.clone());
    let h = g.matmul(xi, w1)?;
    let h = g.add(h, b1)?;
    let h = g.tanh(h)?;
    let o = g.matmul(h, w2)?;
    let o = g.sigmoid(o)?;
    let sq = g.square(o)?;
    g.mean(sq)
}

#[test]
fn random_two_layer_net_matches_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[5, 3], -1.0, 1.0);
        let theta = random_tensor(&mut rng, &[20], -1.0, 1.0);
        let err = grad_check(|g, p| two_layer_net_loss(g, p, &x), &theta, H).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn backward_is_deterministic_and_does_not_leak() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[5, 3], -1.0, 1.0);
    let theta = random_tensor(&mut rng, &[20], -1.0, 1.0);
    let mut g = Graph::new();
    let p = g.param(theta);
    let l = two_layer_net_loss(&mut g, p, &x).unwrap();
    let first = g.backward(l).unwrap().get(p).unwrap().clone();
    let second = g.backward(l).unwrap().get(p).unwrap().clone();
    assert_eq!(first.data(), second.data());
}

#[test]
fn grad_check_quadratic_is_exact() {
    let err = grad_check(|g, p| g.square(p), &Tensor::scalar(3.0), 1e-5).unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn grad_check_reports_wrong_gradients_without_failing() {
    // clamp at a kink: analytic passes the gradient, the finite difference sees half of it.
    let err = grad_check(|g, p| g.clamp(p, 0.0, 1.0), &Tensor::scalar(1.0), 1e-5).unwrap();
    assert!(err > 0.1);
}

#[test]
fn normalize_falls_back_to_uniform_on_zero_rows() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 3.0]).unwrap());
    let y = g.normalize(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.25, 0.75]);
    let s = weighted_sum(&mut g, y, 0).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(&grads.get(x).unwrap().data()[..2], &[0.0, 0.0]);
}

/// Unfused reference for `product_limit` built from elementary primitives.
fn product_limit_reference(g: &mut Graph, w: Var, events: &[bool], floor: f64) -> Result<Var, AutodiffError> {
    let cum = g.cumsum(w)?;
    let before = g.sub(cum, w)?;
    let at_risk = g.rsub_scalar(1.0, before)?;
    let at_risk = g.clamp(at_risk, floor, f64::INFINITY)?;
    let hazard = g.div(w, at_risk)?;
    let mask = g.constant(Tensor::vector(events.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect()));
    let hazard = g.mul(hazard, mask)?;
    let factor = g.rsub_scalar(1.0, hazard)?;
    let factor = g.clamp(factor, 0.0, 1.0)?;
    g.cumprod(factor)
}

#[test]
fn product_limit_matches_composition_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..100u64 {
        let rows = rng.random_range(1..4);
        let cols = rng.random_range(1..7);
        let events: Vec<bool> = (0..cols).map(|_| rng.random_bool(0.7)).collect();
        let theta = random_tensor(&mut rng, &[rows, cols], -2.0, 2.0);
        // Softmin keeps the weights on the simplex, as in the estimator.
        let fused = |g: &mut Graph, p: Var| {
            let w = g.softmin(p)?;
            let s = g.product_limit(w, &events, 1e-8)?;
            weighted_sum(g, s, seed)
        };
        // A final event sits on the clamp kink (its factor is exactly 0), so finite
        // differences are only meaningful when the last point is censored.
        if !events[cols - 1] {
            let err = grad_check(fused, &theta, H).unwrap();
            assert!(err < TOL, "seed {seed}: rel err {err}");
        }

        let mut g = Graph::new();
        let p = g.param(theta.clone());
        let w = g.softmin(p).unwrap();
        let a = g.product_limit(w, &events, 1e-8).unwrap();
        let b = product_limit_reference(&mut g, w, &events, 1e-8).unwrap();
        for (x, y) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((x - y).abs() < 1e-14);
        }
        let la = weighted_sum(&mut g, a, seed).unwrap();
        let lb = weighted_sum(&mut g, b, seed).unwrap();
        let ga = g.backward(la).unwrap().get(p).unwrap().clone();
        let gb = g.backward(lb).unwrap().get(p).unwrap().clone();
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert!((x - y).abs() < 1e-12, "seed {seed}: {x} vs {y}");
        }
    }
}

#[test]
fn product_limit_example() {
    // Uniform weights over three uncensored points give the Kaplan-Meier steps 2/3, 1/3, 0.
    let mut g = Graph::new();
    let w = g.constant(Tensor::vector(vec![1.0 / 3.0; 3]));
    let s = g.product_limit(w, &[true, true, true], 1e-8).unwrap();
    let v = g.value(s).data().to_vec();
    assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15 && v[2].abs() < 1e-15);
}
