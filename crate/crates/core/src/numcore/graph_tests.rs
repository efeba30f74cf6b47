use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Analytic gradient of `out` w.r.t. `leaf` vs central differences with `h = 1e-5`.
fn check_leaf(g: &mut Graph, out: NodeId, leaf: NodeId, tol: f64) {
    g.forward().unwrap();
    g.backward(out).unwrap();
    let analytic = g.grad(leaf).expect("leaf gradient").clone();
    let x0 = g.value(leaf).unwrap().clone();
    let numeric = finite_diff_gradient(
        |x| {
            g.set(leaf, x.clone())?;
            g.forward()?;
            Ok(g.value(out).unwrap().item())
        },
        &x0,
        1e-5,
    )
    .unwrap();
    g.set(leaf, x0).unwrap();
    let err = relative_error(&analytic, &numeric, 1e-12);
    assert!(err <= tol, "relative error {err} > {tol}\nanalytic {analytic:?}\nnumeric {numeric:?}");
}

#[test]
fn linear_forward_example() {
    let mut g = Graph::new();
    let x = g.input("x", &[1, 1]);
    let w = g.param("w", &[1, 1]);
    let b = g.param("b", &[1]);
    let y = g.linear(x, w, b).unwrap();
    g.name(y, "y");
    let out = g
        .run(
            vec![
                ("x", Tensor::matrix(&[[3.0]]).unwrap()),
                ("w", Tensor::matrix(&[[2.0]]).unwrap()),
                ("b", Tensor::vector(&[1.0])),
            ],
            &["y"],
        )
        .unwrap();
    assert_eq!(out["y"].data(), &[7.0]);
}

#[test]
fn leaky_relu_and_max_pool_examples() {
    let mut g = Graph::new();
    let x = g.input("x", &[2]);
    let y = g.leaky_relu(x, 0.01);
    g.set(x, Tensor::vector(&[-1.0, 2.0])).unwrap();
    g.forward().unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[-0.01, 2.0]);

    let mut g = Graph::new();
    let x = g.input("x", &[3, 2]);
    let y = g.max_pool_groups(x, 3).unwrap();
    g.set(x, Tensor::matrix(&[[1.0, 5.0], [4.0, 2.0], [3.0, 3.0]]).unwrap()).unwrap();
    g.forward().unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[4.0, 5.0]);
}

#[test]
fn square_and_kink_gradients() {
    let mut g = Graph::new();
    let x = g.param("x", &[1]);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.set(x, Tensor::vector(&[3.0])).unwrap();
    g.forward().unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);

    let mut g = Graph::new();
    let x = g.param("x", &[1]);
    let y = g.leaky_relu(x, 0.01);
    let s = g.sum(y);
    g.set(x, Tensor::vector(&[-2.0])).unwrap();
    g.forward().unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.01]);
}

#[test]
fn backward_before_forward_is_a_usage_error() {
    let mut g = Graph::new();
    let x = g.param("x", &[1]);
    let s = g.sum(x);
    g.set(x, Tensor::vector(&[1.0])).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Usage(_))));
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::new();
    let x = g.input("points", &[4, 3]);
    let w = g.param("weight", &[2, 5]);
    let b = g.param("bias", &[5]);
    let err = g.linear(x, w, b).unwrap_err().to_string();
    assert!(err.contains("weight"), "{err}");

    let err = g.set(x, Tensor::zeros(&[5, 3])).unwrap_err().to_string();
    assert!(err.contains("points"), "{err}");
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let x = g.param("x", &[5, 4]);
    let w1 = g.param("w1", &[4, 6]);
    let b1 = g.param("b1", &[6]);
    let w2 = g.param("w2", &[6, 2]);
    let b2 = g.param("b2", &[2]);
    let h = g.linear(x, w1, b1).unwrap();
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let y = g.linear(h, w2, b2).unwrap();
    let y2 = g.mul(y, y).unwrap();
    let out = g.sum(y2);
    for (id, shape) in [(x, vec![5, 4]), (w1, vec![4, 6]), (b1, vec![6]), (w2, vec![6, 2]), (b2, vec![2])] {
        g.set(id, random(&mut rng, &shape, 1.0)).unwrap();
    }
    for leaf in [x, w1, b1, w2, b2] {
        check_leaf(&mut g, out, leaf, 1e-6);
    }
}

#[test]
fn batch_norm_training_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::new();
    g.set_training(true);
    let x = g.param("x", &[6, 3]);
    let gamma = g.param("gamma", &[3]);
    let beta = g.param("beta", &[3]);
    let rm = g.input("rm", &[3]);
    let rv = g.input("rv", &[3]);
    let y = g.batch_norm(x, gamma, beta, rm, rv, BN_MOMENTUM, BN_EPS).unwrap();
    let w = g.input("w", &[6, 3]);
    let yw = g.mul(y, w).unwrap();
    let out = g.sum(yw);
    g.set(x, random(&mut rng, &[6, 3], 2.0)).unwrap();
    g.set(gamma, random(&mut rng, &[3], 1.0)).unwrap();
    g.set(beta, random(&mut rng, &[3], 1.0)).unwrap();
    g.set(rm, Tensor::zeros(&[3])).unwrap();
    g.set(rv, Tensor::filled(&[3], 1.0)).unwrap();
    g.set(w, random(&mut rng, &[6, 3], 1.0)).unwrap();
    for leaf in [x, gamma, beta] {
        check_leaf(&mut g, out, leaf, 1e-6);
    }
}

#[test]
fn batch_norm_eval_is_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.param("x", &[4, 2]);
    let gamma = g.input("gamma", &[2]);
    let beta = g.input("beta", &[2]);
    let rm = g.input("rm", &[2]);
    let rv = g.input("rv", &[2]);
    let y = g.batch_norm(x, gamma, beta, rm, rv, BN_MOMENTUM, BN_EPS).unwrap();
    g.set(gamma, Tensor::vector(&[2.0, -1.0])).unwrap();
    g.set(beta, Tensor::vector(&[0.5, 0.25])).unwrap();
    g.set(rm, Tensor::vector(&[1.0, -1.0])).unwrap();
    g.set(rv, Tensor::vector(&[4.0, 0.25])).unwrap();
    let a = random(&mut rng, &[4, 2], 3.0);
    let b = random(&mut rng, &[4, 2], 3.0);
    let eval = |g: &mut Graph, t: &Tensor| {
        g.set(x, t.clone()).unwrap();
        g.forward().unwrap();
        g.value(y).unwrap().clone()
    };
    let (fa, fb) = (eval(&mut g, &a), eval(&mut g, &b));
    let mid = Tensor::new(
        vec![4, 2],
        a.data().iter().zip(b.data()).map(|(p, q)| 0.25 * p + 0.75 * q).collect(),
    )
    .unwrap();
    let fm = eval(&mut g, &mid);
    for ((m, p), q) in fm.data().iter().zip(fa.data()).zip(fb.data()) {
        assert!((m - (0.25 * p + 0.75 * q)).abs() < 1e-12);
    }
    // running stats untouched in eval mode
    assert_eq!(g.value(rm).unwrap().data(), &[1.0, -1.0]);
}

#[test]
fn point_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let pts = g.param("pts", &[8, 3]);
    let t = g.param("t", &[2, 3]);
    let r = g.param("r", &[2]);
    let target = g.param("target", &[7, 3]);
    let posed = g.rigid_yaw(pts, t, r).unwrap();
    let refl = g.reflect(posed, [0.1, 0.0, -0.2], [0.6, 0.0, 0.8]).unwrap();
    let first = g.slice_rows(refl, 0, 4).unwrap();
    let second = g.slice_rows(posed, 4, 4).unwrap();
    let pooled = g.concat_rows(&[first, second]).unwrap();
    let ch = g.chamfer(pooled, target).unwrap();
    let ov = g.overlap(first, second, 0.9).unwrap();
    let out = g.add(ch, ov).unwrap();
    g.set(pts, random(&mut rng, &[8, 3], 0.5)).unwrap();
    g.set(t, random(&mut rng, &[2, 3], 0.3)).unwrap();
    g.set(r, random(&mut rng, &[2], 3.0)).unwrap();
    g.set(target, random(&mut rng, &[7, 3], 0.6)).unwrap();
    for leaf in [pts, t, r, target] {
        check_leaf(&mut g, out, leaf, 1e-6);
    }
}

#[test]
fn grouped_chamfer_kl_and_exp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let a = g.param("a", &[6, 3]);
    let b = g.param("b", &[4, 3]);
    let ch = g.chamfer_groups(a, b, 2).unwrap();
    let mu = g.param("mu", &[2, 3]);
    let lv = g.param("lv", &[2, 3]);
    let kl = g.gaussian_kl(mu, lv).unwrap();
    let half = g.scale(lv, 0.5);
    let std = g.exp(half);
    let eps = g.input("eps", &[2, 3]);
    let noise = g.mul(std, eps).unwrap();
    let z = g.add(mu, noise).unwrap();
    let z = g.add_scalar(z, 0.3);
    let zm = g.mean(z);
    let s = g.add(ch, kl).unwrap();
    let out = g.add(s, zm).unwrap();
    g.set(a, random(&mut rng, &[6, 3], 1.0)).unwrap();
    g.set(b, random(&mut rng, &[4, 3], 1.0)).unwrap();
    g.set(mu, random(&mut rng, &[2, 3], 1.0)).unwrap();
    g.set(lv, random(&mut rng, &[2, 3], 1.0)).unwrap();
    g.set(eps, random(&mut rng, &[2, 3], 1.0)).unwrap();
    for leaf in [a, b, mu, lv] {
        check_leaf(&mut g, out, leaf, 1e-6);
    }
}

#[test]
fn max_pool_and_reshape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut g = Graph::new();
    let x = g.param("x", &[6, 2]);
    let p = g.max_pool_groups(x, 3).unwrap();
    let r = g.reshape(p, &[4]).unwrap();
    let w = g.input("w", &[4]);
    let m = g.mul(r, w).unwrap();
    let out = g.sum(m);
    g.set(x, random(&mut rng, &[6, 2], 1.0)).unwrap();
    g.set(w, random(&mut rng, &[4], 1.0)).unwrap();
    check_leaf(&mut g, out, x, 1e-6);
}

#[test]
fn kl_closed_forms() {
    let mut g = Graph::new();
    let mu = g.input("mu", &[1, 64]);
    let lv = g.input("lv", &[1, 64]);
    let kl = g.gaussian_kl(mu, lv).unwrap();
    g.set(mu, Tensor::zeros(&[1, 64])).unwrap();
    g.set(lv, Tensor::zeros(&[1, 64])).unwrap();
    g.forward().unwrap();
    assert_eq!(g.value(kl).unwrap().item(), 0.0);
    g.set(mu, Tensor::filled(&[1, 64], 1.0)).unwrap();
    g.forward().unwrap();
    assert_eq!(g.value(kl).unwrap().item(), 32.0);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let build = |rng: &mut ChaCha8Rng| {
        let mut g = Graph::new();
        let a = g.param("a", &[30, 3]);
        let b = g.input("b", &[20, 3]);
        let c = g.chamfer(a, b).unwrap();
        g.set(a, random(rng, &[30, 3], 1.0)).unwrap();
        g.set(b, random(rng, &[20, 3], 1.0)).unwrap();
        g.forward().unwrap();
        g.backward(c).unwrap();
        (g.value(c).unwrap().clone(), g.grad(a).unwrap().clone())
    };
    let mut rng2 = rng.clone();
    assert_eq!(build(&mut rng), build(&mut rng2));
}
