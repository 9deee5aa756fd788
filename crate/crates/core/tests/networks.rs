//! Lifting network, denoiser and residual branch: gradients, wiring and the
//! zero-initialized no-op.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvf_core::camera::ViewDelta;
use tvf_core::diffusion::{diffusion_loss, randn, Backbone, BackboneConfig, NoiseDraw, NoiseSchedule};
use tvf_core::injection::InjectionNet;
use tvf_core::lifting::{embed_batch, LiftConfig, LiftingNet};
use tvf_core::tensor::grad;
use tvf_core::tensor::gradcheck::fd_check;
use tvf_core::{Graph, ParamSet, Tensor};

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig { c0: 4, c1: 8, temb: 8, groups: 2, ctx_tokens: 2, ctx_dim: 4 }
}

fn tiny_lift() -> LiftConfig {
    LiftConfig { dim: 4, groups: 2, ctx_tokens: 2, ctx_dim: 4, plane_channels: 2, extent: 1.0 }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Attention key biases shift every logit of a query row equally, so softmax
/// cancels them: their exact gradient is zero and relative error against
/// finite differences measures only round-off. Check they are zero and
/// freeze them for the finite-difference pass.
fn freeze_key_biases(ps: &mut ParamSet<f64>, analytic: &std::collections::BTreeMap<String, Tensor<f64>>) {
    let names: Vec<String> = ps.iter().map(|(n, _)| n.to_string()).filter(|n| n.ends_with(".k.b")).collect();
    assert!(!names.is_empty());
    for n in names {
        assert!(analytic[&n].max_abs() < 1e-10, "{n}: {}", analytic[&n].max_abs());
        ps.get_mut(&n).unwrap().trainable = false;
    }
}

fn random_embed(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let deltas: Vec<ViewDelta> = (0..n)
        .map(|_| ViewDelta { d_theta: rng.random_range(-3.0..3.0), d_phi: rng.random_range(-0.5..0.5), d_radius: 0.0 })
        .collect();
    embed_batch(&deltas)
}

#[test]
fn lifting_gradients_match_finite_differences() {
    let net = LiftingNet::new(tiny_lift()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ps = ParamSet::<f64>::new();
    net.init(&mut ps, &mut rng).unwrap();
    // Larger weights than the init scale keep every path well above round-off.
    for (_, p) in ps.iter_mut() {
        if p.tensor.shape().len() > 1 {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    ps.insert("x", uniform(&mut rng, &[2, 4, 4, 4]), true).unwrap();
    ps.insert("e", random_embed(&mut rng, 2), true).unwrap();
    let probe = uniform(&mut rng, &[2, 6, 4, 4]);
    let eval = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = g.bind(ps);
        let y = net.forward(&mut g, &b, b.get("x")?, b.get("e")?)?;
        let l = g.dot_const(y, probe.clone())?;
        let grads = grad(&g, l, ps, &b)?;
        Ok((g.value(l).item()?, grads))
    };
    let (_, analytic) = eval(&ps).unwrap();
    freeze_key_biases(&mut ps, &analytic);
    let report = fd_check(&ps, &analytic, FD_EPS, Some(6), &mut rng, |p| eval(p).map(|r| r.0)).unwrap();
    assert!(report.max_rel_error < FD_TOL, "{report:?}");
    assert!(report.checked > 100);
}

#[test]
fn lifting_output_depends_on_the_delta() {
    let net = LiftingNet::new(tiny_lift()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ps = ParamSet::<f64>::new();
    net.init(&mut ps, &mut rng).unwrap();
    ps.set_all_trainable(false);
    ps.insert("e", random_embed(&mut rng, 2), true).unwrap();
    let x = uniform(&mut rng, &[2, 4, 4, 4]);
    let mut g = Graph::new();
    let b = g.bind(&ps);
    let xv = g.constant(x);
    let y = net.forward(&mut g, &b, xv, b.get("e").unwrap()).unwrap();
    let l = g.mean_square(y).unwrap();
    let grads = grad(&g, l, &ps, &b).unwrap();
    assert!(grads["e"].l2_norm() > 0.0);
}

#[test]
fn every_lifting_parameter_gets_gradient() {
    let net = LiftingNet::new(tiny_lift()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ps = ParamSet::<f64>::new();
    net.init(&mut ps, &mut rng).unwrap();
    let x = uniform(&mut rng, &[2, 4, 4, 4]);
    let target = uniform(&mut rng, &[2, 6, 4, 4]);
    let e = random_embed(&mut rng, 2);
    let mut g = Graph::new();
    let b = g.bind(&ps);
    let (xv, ev, tv) = (g.constant(x), g.constant(e), g.constant(target));
    let y = net.forward(&mut g, &b, xv, ev).unwrap();
    let l = g.mse(y, tv).unwrap();
    let grads = grad(&g, l, &ps, &b).unwrap();
    assert_eq!(grads.len(), ps.len());
    // Key biases are the exception: softmax cancels them exactly.
    for (name, gr) in grads.iter().filter(|(n, _)| !n.ends_with(".k.b")) {
        assert!(gr.l2_norm() > 0.0, "{name} has zero gradient");
    }
}

#[test]
fn lifting_a_batch_matches_lifting_items() {
    let net = LiftingNet::new(tiny_lift()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut ps = ParamSet::<f64>::new();
    net.init(&mut ps, &mut rng).unwrap();
    let x = uniform(&mut rng, &[3, 4, 4, 4]);
    let e = random_embed(&mut rng, 3);
    let run = |x: Tensor<f64>, e: Tensor<f64>| {
        let mut g = Graph::new();
        let b = g.bind_frozen(&ps);
        let (xv, ev) = (g.constant(x), g.constant(e));
        let y = net.forward(&mut g, &b, xv, ev).unwrap();
        g.value(y).clone()
    };
    let all = run(x.clone(), e.clone());
    for i in 0..3 {
        let one =
            run(Tensor::stack(&[&x.index0(i).unwrap()]).unwrap(), Tensor::stack(&[&e.index0(i).unwrap()]).unwrap());
        assert!(one.index0(0).unwrap().max_abs_diff(&all.index0(i).unwrap()).unwrap() < 1e-5);
    }
}

#[test]
fn backbone_gradients_match_finite_differences() {
    let bb = Backbone::new(tiny_backbone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ps = ParamSet::<f64>::new();
    bb.init(&mut ps, &mut rng).unwrap();
    for (_, p) in ps.iter_mut() {
        if p.tensor.shape().len() > 1 {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.4..0.4);
            }
        }
    }
    ps.insert("x", uniform(&mut rng, &[2, 4, 4, 4]), true).unwrap();
    ps.insert("m", uniform(&mut rng, &[2, 4, 4, 4]), true).unwrap();
    let e = random_embed(&mut rng, 2);
    let probe = uniform(&mut rng, &[2, 4, 4, 4]);
    let eval = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = g.bind(ps);
        let ev = g.constant(e.clone());
        let y = bb.predict_eps(&mut g, &b, b.get("x")?, &[3, 70], b.get("m")?, ev, None)?;
        let l = g.dot_const(y, probe.clone())?;
        let grads = grad(&g, l, ps, &b)?;
        Ok((g.value(l).item()?, grads))
    };
    let (_, analytic) = eval(&ps).unwrap();
    freeze_key_biases(&mut ps, &analytic);
    let report = fd_check(&ps, &analytic, FD_EPS, Some(3), &mut rng, |p| eval(p).map(|r| r.0)).unwrap();
    assert!(report.max_rel_error < FD_TOL, "{report:?}");
}

/// Backbone and an injection branch whose links are perturbed away from zero.
fn live_branch(seed: u64, use_xt: bool) -> (Backbone, InjectionNet, ParamSet<f64>) {
    let cfg = tiny_backbone();
    let bb = Backbone::new(cfg.clone()).unwrap();
    let inj = InjectionNet::new(cfg, use_xt, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::<f64>::new();
    bb.init(&mut ps, &mut rng).unwrap();
    let mut extra = ParamSet::new();
    inj.init_from_backbone(&ps, &mut extra, &mut rng).unwrap();
    ps.merge(extra).unwrap();
    for (name, p) in ps.iter_mut() {
        if name.starts_with("inject.link") {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    (bb, inj, ps)
}

#[test]
fn residual_gradients_wrt_fused_latent_match_finite_differences() {
    let (_, inj, mut ps) = live_branch(31, true);
    ps.set_all_trainable(false);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    ps.insert("f", uniform(&mut rng, &[2, 4, 4, 4]), true).unwrap();
    let x_t = uniform(&mut rng, &[2, 4, 4, 4]);
    let e = random_embed(&mut rng, 2);
    let probes: Vec<Tensor<f64>> =
        inj.junction_shapes().iter().map(|s| uniform(&mut rng, &[2, s[0], s[1], s[2]])).collect();
    let eval = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = g.bind(ps);
        let (xv, ev) = (g.constant(x_t.clone()), g.constant(e.clone()));
        let res = inj.compute_residuals(&mut g, &b, b.get("f")?, xv, &[5, 60], ev)?;
        let mut total = None;
        for (r, p) in res.into_iter().zip(&probes) {
            let d = g.dot_const(r, p.clone())?;
            total = Some(match total {
                None => d,
                Some(t) => g.add(t, d)?,
            });
        }
        let l = total.expect("seven junctions");
        let grads = grad(&g, l, ps, &b)?;
        Ok((g.value(l).item()?, grads))
    };
    let (_, analytic) = eval(&ps).unwrap();
    let report = fd_check(&ps, &analytic, FD_EPS, None, &mut rng, |p| eval(p).map(|r| r.0)).unwrap();
    assert_eq!(report.checked, 2 * 4 * 4 * 4);
    assert!(report.max_rel_error < FD_TOL, "{report:?}");
}

#[test]
fn residual_shapes_are_checked_at_construction() {
    assert!(InjectionNet::new(tiny_backbone(), true, 5).is_err());
    let inj = InjectionNet::new(tiny_backbone(), true, 8).unwrap();
    let shapes = inj.junction_shapes();
    assert_eq!(shapes.len(), 7);
    assert_eq!(shapes[0], [4, 8, 8]);
    assert_eq!(shapes[6], [8, 4, 4]);
}

#[test]
fn injection_branch_without_noisy_input_ignores_it() {
    let (_, inj, ps) = live_branch(33, false);
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let f = uniform(&mut rng, &[1, 4, 4, 4]);
    let e = random_embed(&mut rng, 1);
    let run = |x: Tensor<f64>| {
        let mut g = Graph::new();
        let b = g.bind_frozen(&ps);
        let (fv, xv, ev) = (g.constant(f.clone()), g.constant(x), g.constant(e.clone()));
        let r = inj.compute_residuals(&mut g, &b, fv, xv, &[9], ev).unwrap();
        g.value(r[6]).clone()
    };
    let a = run(uniform(&mut rng, &[1, 4, 4, 4]));
    let b = run(uniform(&mut rng, &[1, 4, 4, 4]));
    assert_eq!(a, b);
}

#[test]
fn stage_two_gradients_skip_the_backbone() {
    let (bb, inj, mut ps) = live_branch(35, true);
    ps.set_trainable_prefix("backbone.", false);
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let schedule = NoiseSchedule::linear(100).unwrap();
    let x0 = uniform(&mut rng, &[2, 4, 4, 4]);
    let main = uniform(&mut rng, &[2, 4, 4, 4]);
    let f = uniform(&mut rng, &[2, 4, 4, 4]);
    let e = random_embed(&mut rng, 2);
    let draw = NoiseDraw::sample(&mut rng, &schedule, &[2, 4, 4, 4]);
    let mut g = Graph::new();
    let b = g.bind(&ps);
    let (mv, ev, fv) = (g.constant(main), g.constant(e), g.constant(f));
    let bref = &b;
    let mut injector =
        |g: &mut Graph<'_, f64>, x_t, steps: &[usize]| inj.compute_residuals(g, bref, fv, x_t, steps, ev);
    let l = diffusion_loss(&bb, &mut g, &b, &schedule, &x0, mv, ev, &draw, Some(&mut injector)).unwrap();
    let grads = grad(&g, l, &ps, &b).unwrap();
    assert!(grads.keys().all(|k| k.starts_with("inject.")));
    assert!(grads.values().any(|t| t.l2_norm() > 0.0));
}

fn eps_pair(
    bb: &Backbone,
    inj: &InjectionNet,
    ps: &ParamSet<f32>,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> (Tensor<f32>, Tensor<f32>) {
    let shape = [n, 4, 16, 16];
    let x = randn::<f32, _>(rng, &shape);
    let main = randn::<f32, _>(rng, &shape);
    let f = randn::<f32, _>(rng, &shape);
    let e: Tensor<f32> = random_embed(rng, n).cast();
    let steps: Vec<usize> = (0..n).map(|_| rng.random_range(1..=100)).collect();
    let mut g = Graph::new();
    let b = g.bind_frozen(ps);
    let (xv, mv, fv, ev) = (g.constant(x), g.constant(main), g.constant(f), g.constant(e));
    let plain = bb.predict_eps(&mut g, &b, xv, &steps, mv, ev, None).unwrap();
    let res = inj.compute_residuals(&mut g, &b, fv, xv, &steps, ev).unwrap();
    let full = bb.predict_eps(&mut g, &b, xv, &steps, mv, ev, Some(&res)).unwrap();
    (g.value(plain).clone(), g.value(full).clone())
}

#[test]
fn fresh_injection_is_a_bitwise_no_op() {
    let cfg = BackboneConfig::default();
    let bb = Backbone::new(cfg.clone()).unwrap();
    let inj = InjectionNet::new(cfg, true, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut ps = ParamSet::<f32>::new();
    bb.init(&mut ps, &mut rng).unwrap();
    let mut extra = ParamSet::new();
    inj.init_from_backbone(&ps, &mut extra, &mut rng).unwrap();
    ps.merge(extra).unwrap();
    let mut seen = 0;
    while seen < 100 {
        let (plain, full) = eps_pair(&bb, &inj, &ps, &mut rng, 10);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&plain), bits(&full));
        seen += 10;
    }
}

#[test]
fn injection_copies_the_encoder_body() {
    let cfg = tiny_backbone();
    let bb = Backbone::new(cfg.clone()).unwrap();
    let inj = InjectionNet::new(cfg, true, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut ps = ParamSet::<f64>::new();
    bb.init(&mut ps, &mut rng).unwrap();
    let mut extra = ParamSet::new();
    inj.init_from_backbone(&ps, &mut extra, &mut rng).unwrap();
    assert_eq!(extra.num_elements(), inj.expected_param_count(&ps));
    for (name, p) in extra.iter() {
        assert!(p.trainable);
        if let Some(rest) = name.strip_prefix("inject.enc.") {
            if !rest.starts_with("conv_in") {
                assert_eq!(&p.tensor, ps.tensor(&format!("backbone.enc.{rest}")).unwrap());
            }
        } else {
            assert!(name.starts_with("inject.link"));
            assert!(p.tensor.data().iter().all(|&v| v == 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_residuals_change_nothing(seed in any::<u64>(), t in 1usize..=100) {
        let bb = Backbone::new(tiny_backbone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::<f64>::new();
        bb.init(&mut ps, &mut rng).unwrap();
        let x = uniform(&mut rng, &[2, 4, 4, 4]);
        let m = uniform(&mut rng, &[2, 4, 4, 4]);
        let e = random_embed(&mut rng, 2);
        let mut g = Graph::new();
        let b = g.bind_frozen(&ps);
        let (xv, mv, ev) = (g.constant(x), g.constant(m), g.constant(e));
        let plain = bb.predict_eps(&mut g, &b, xv, &[t, t], mv, ev, None).unwrap();
        let zeros: Vec<_> = tiny_backbone()
            .junction_shapes(4)
            .iter()
            .map(|s| g.constant(Tensor::zeros(&[2, s[0], s[1], s[2]])))
            .collect();
        let with = bb.predict_eps(&mut g, &b, xv, &[t, t], mv, ev, Some(&zeros)).unwrap();
        prop_assert_eq!(g.value(plain), g.value(with));
    }
}

#[test]
fn schedule_ends_near_pure_noise() {
    let s = NoiseSchedule::linear(100).unwrap();
    assert!(s.alpha_bar(100) < 0.01, "{}", s.alpha_bar(100));
    assert_eq!(s.alpha_bar(0), 1.0);
    assert!((s.alpha_bar(1) - (1.0 - 1e-3)).abs() < 1e-15);
    assert!(s.betas.windows(2).all(|w| w[0] < w[1]));
    assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
    let ab2 = (1.0 - s.beta(1)) * (1.0 - s.beta(2));
    assert!((s.posterior_variance(2) - (1.0 - s.alpha_bar(1)) / (1.0 - ab2) * s.beta(2)).abs() < 1e-15);
}

#[test]
fn q_sample_rejects_out_of_range_steps() {
    let s = NoiseSchedule::linear(10).unwrap();
    let x = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
    assert!(s.q_sample(&x, 0, &x).is_err());
    assert!(s.q_sample(&x, 11, &x).is_err());
    let eps = Tensor::full(&[1, 4, 2, 2], 1.0);
    let y = s.q_sample(&x, 10, &eps).unwrap();
    assert!((y.data()[0] - (1.0 - s.alpha_bar(10)).sqrt()).abs() < 1e-15);
}

#[test]
fn untrained_denoiser_loss_is_near_noise_variance() {
    let bb = Backbone::new(BackboneConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut ps = ParamSet::<f32>::new();
    bb.init(&mut ps, &mut rng).unwrap();
    let s = NoiseSchedule::linear(100).unwrap();
    let x0: Tensor<f32> = uniform(&mut rng, &[4, 4, 16, 16]).cast();
    let main: Tensor<f32> = uniform(&mut rng, &[4, 4, 16, 16]).cast();
    let e: Tensor<f32> = random_embed(&mut rng, 4).cast();
    let draw = NoiseDraw::sample(&mut rng, &s, &[4, 4, 16, 16]);
    let mut g = Graph::new();
    let b = g.bind_frozen(&ps);
    let (mv, ev) = (g.constant(main), g.constant(e));
    let l = diffusion_loss(&bb, &mut g, &b, &s, &x0, mv, ev, &draw, None).unwrap();
    assert!(g.value(l).item().unwrap() > 0.5);
}
