//! Every differentiable op against central finite differences in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvf_core::tensor::grad;
use tvf_core::tensor::gradcheck::fd_check;
use tvf_core::{Graph, ParamSet, Result, Tensor, Var};

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks `f` with a random linear probe on its output.
fn check(inputs: &[(&str, &[usize])], seed: u64, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    for (name, shape) in inputs {
        ps.insert(name, randn(&mut rng, shape), true).unwrap();
    }
    let probe = {
        let mut g = Graph::new();
        let b = g.bind(&ps);
        let vars: Vec<Var> = inputs.iter().map(|(n, _)| b.get(n).unwrap()).collect();
        let y = f(&mut g, &vars).unwrap();
        randn(&mut rng, g.shape(y))
    };
    let eval = |ps: &ParamSet<f64>| -> Result<(f64, _)> {
        let mut g = Graph::new();
        let b = g.bind(ps);
        let vars: Vec<Var> = inputs.iter().map(|(n, _)| b.get(n).unwrap()).collect();
        let y = f(&mut g, &vars)?;
        let l = g.dot_const(y, probe.clone())?;
        let grads = grad(&g, l, ps, &b)?;
        Ok((g.value(l).item()?, grads))
    };
    let (_, analytic) = eval(&ps).unwrap();
    let report = fd_check(&ps, &analytic, 1e-6, Some(40), &mut rng, |p| eval(p).map(|r| r.0)).unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn elementwise_ops() {
    let s: &[usize] = &[2, 3, 4];
    check(&[("a", s), ("b", s)], 1, |g, v| {
        let x = g.add(v[0], v[1])?;
        let y = g.mul(x, v[0])?;
        let z = g.sub(y, v[1])?;
        let z = g.silu(z)?;
        let z = g.softplus(z)?;
        g.scale(z, -1.5)
    });
}

#[test]
fn bias_and_per_channel_offsets() {
    check(&[("x", &[2, 3, 5]), ("b", &[3]), ("v", &[2, 3])], 2, |g, v| {
        let y = g.add_bias(v[0], v[1])?;
        g.add_per_channel(y, v[2])
    });
}

#[test]
fn shape_ops() {
    check(&[("a", &[2, 3, 4]), ("b", &[2, 2, 4])], 3, |g, v| {
        let c = g.concat(&[v[0], v[1], v[0]])?;
        let s = g.slice(c, 2, 4)?;
        let t = g.transpose(s)?;
        g.reshape(t, &[4, 8])
    });
}

#[test]
fn matmul_with_transposes() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa: Vec<usize> = if ta { vec![2, 4, 3] } else { vec![2, 3, 4] };
        let sb: Vec<usize> = if tb { vec![2, 5, 4] } else { vec![2, 4, 5] };
        check(&[("a", &sa), ("b", &sb)], 4, |g, v| g.matmul_t(v[0], v[1], ta, tb));
    }
    check(&[("a", &[3, 4]), ("b", &[4, 2])], 5, |g, v| g.matmul(v[0], v[1]));
}

#[test]
fn convolutions() {
    check(&[("x", &[2, 3, 6, 6]), ("w", &[4, 3, 3, 3]), ("b", &[4])], 6, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1));
    check(&[("x", &[2, 3, 6, 6]), ("w", &[4, 3, 3, 3])], 7, |g, v| g.conv2d(v[0], v[1], None, 2, 1));
    check(&[("x", &[2, 3, 4, 4]), ("w", &[3, 2, 4, 4]), ("b", &[2])], 8, |g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
    });
}

#[test]
fn group_norm() {
    check(&[("x", &[2, 4, 3, 3]), ("g", &[4]), ("b", &[4])], 9, |g, v| g.group_norm(v[0], v[1], v[2], 2, 1e-5));
}

#[test]
fn softmax_and_attention() {
    check(&[("x", &[3, 5])], 10, |g, v| g.softmax(v[0]));
    check(&[("q", &[2, 3, 4]), ("k", &[2, 5, 4]), ("v", &[2, 5, 6])], 11, |g, v| g.attention(v[0], v[1], v[2]));
}

#[test]
fn reductions() {
    check(&[("a", &[3, 4]), ("b", &[3, 4])], 12, |g, v| {
        let m = g.mse(v[0], v[1])?;
        let s = g.sum(v[0])?;
        g.add(m, s)
    });
}

#[test]
fn grid_sample_plane_and_coordinates() {
    check(&[("p", &[3, 5, 5]), ("uv", &[7, 2])], 13, |g, v| {
        // Keep coordinates inside the plane so no sample crosses the border.
        let uv = g.scale(v[1], 0.9)?;
        g.grid_sample(v[0], uv)
    });
}

#[test]
fn frozen_inputs_get_no_gradient() {
    let mut ps = ParamSet::<f64>::new();
    ps.insert("a", Tensor::full(&[2], 1.0), true).unwrap();
    ps.insert("b", Tensor::full(&[2], 2.0), false).unwrap();
    let mut g = Graph::new();
    let bind = g.bind(&ps);
    let y = g.mul(bind.get("a").unwrap(), bind.get("b").unwrap()).unwrap();
    let l = g.sum(y).unwrap();
    let grads = grad(&g, l, &ps, &bind).unwrap();
    assert_eq!(grads.len(), 1);
    assert_eq!(grads["a"].data(), &[2.0, 2.0]);
}
