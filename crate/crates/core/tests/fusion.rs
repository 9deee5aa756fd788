use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvf_core::camera::CameraPose;
use tvf_core::fusion::{
    aggregate_point, integrate_ray, normalize_weights, render_fused, view_weight, FusionConfig, Readout, RenderJob,
    Sampling,
};
use tvf_core::tensor::grad;
use tvf_core::tensor::gradcheck::fd_check;
use tvf_core::triplane::TriPlane;
use tvf_core::{Graph, ParamSet, Tensor};

fn pose(theta_deg: f64) -> CameraPose {
    CameraPose::from_degrees(theta_deg, 0.0, 2.0).unwrap()
}

fn random_planes(rng: &mut ChaCha8Rng, c: usize, p: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(&[3 * c, p, p], |_| rng.random_range(-scale..scale))
}

fn identity_readout(c: usize) -> (Tensor<f64>, Tensor<f64>) {
    // Payload channel k -> output channel k for the first four channels.
    let mut w = Tensor::zeros(&[4, c - 1, 1, 1]);
    for k in 0..4.min(c - 1) {
        w.data_mut()[k * (c - 1) + k] = 1.0;
    }
    (w, Tensor::zeros(&[4]))
}

fn render(tps: &[TriPlane<f64>], target: f64, cfg: &FusionConfig, size: usize) -> Tensor<f64> {
    let c = tps[0].channels();
    let (w, b) = identity_readout(c);
    render_fused(tps, &pose(target), cfg, Readout { weight: &w, bias: &b }, size, size).unwrap().grid
}

#[test]
fn view_weight_fixed_points() {
    assert_eq!(view_weight(0.0), 1.0);
    assert_eq!(view_weight(PI), 0.0);
    assert_eq!(view_weight(PI / 2.0), 0.5);
    assert_eq!(view_weight(-1.1), view_weight(1.1));
}

#[test]
fn weight_normalization_and_fallback() {
    let (w, fb) = normalize_weights(&[0.75, 0.0]).unwrap();
    assert_eq!((w, fb), (vec![1.0, 0.0], false));
    assert_eq!(normalize_weights(&[1.0]).unwrap(), (vec![1.0], false));
    assert_eq!(normalize_weights(&[0.0, 0.0]).unwrap(), (vec![0.5, 0.5], true));
    assert!(normalize_weights(&[]).is_err());
    let (w, _) = normalize_weights(&[0.3, 0.9, 0.05, 0.41]).unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn aggregation_is_a_convex_combination() {
    let out = aggregate_point::<f64>(&[&[2.0, 0.0], &[0.0, 2.0]], &[0.75, 0.25]).unwrap();
    assert_eq!(out, vec![1.5, 0.5]);
    let out = aggregate_point::<f64>(&[&[0.3, -1.0], &[0.3, -1.0]], &[0.1, 0.9]).unwrap();
    assert!((out[0] - 0.3).abs() < 1e-15 && (out[1] + 1.0).abs() < 1e-15);
    assert_eq!(aggregate_point::<f64>(&[&[4.0, 5.0]], &[1.0]).unwrap(), vec![4.0, 5.0]);
}

#[test]
fn constant_medium_matches_closed_form() {
    let (s, sigma, length, c) = (256, 1.7, 1.3, 0.6);
    let sig = vec![sigma; s];
    let pay = vec![c; s];
    let del = vec![length / s as f64; s];
    let r = integrate_ray(&sig, &pay, &del).unwrap();
    let expect = c * (1.0 - (-sigma * length).exp());
    assert!((r.value[0] - expect).abs() < 1e-3);
    assert!(r.transmittance.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.opacity >= 0.0 && r.opacity <= 1.0);
}

#[test]
fn transparent_and_opaque_rays() {
    let r = integrate_ray(&[0.0; 5], &[1.0; 5], &[0.1; 5]).unwrap();
    assert_eq!((r.value[0], r.opacity), (0.0, 0.0));
    let r = integrate_ray::<f64>(&[1e4, 2.0, 3.0], &[0.25, -1.0, 1.0, 9.0, 5.0, 7.0], &[0.1; 3]).unwrap();
    assert!((r.value[0] - 0.25).abs() < 1e-6 && (r.value[1] + 1.0).abs() < 1e-6);
}

#[test]
fn zero_planes_render_the_readout_bias() {
    let tps = vec![TriPlane::zeros(5, 4, pose(10.0)).unwrap(), TriPlane::zeros(5, 4, pose(200.0)).unwrap()];
    let w = Tensor::from_fn(&[4, 4, 1, 1], |i| i as f64 * 0.1);
    let b = Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let out =
        render_fused(&tps, &pose(30.0), &FusionConfig::default(), Readout { weight: &w, bias: &b }, 3, 3).unwrap();
    for k in 0..4 {
        for v in &out.grid.data()[k * 9..(k + 1) * 9] {
            assert_eq!(*v, b.data()[k]);
        }
    }
}

#[test]
fn aligned_single_view_has_weight_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let planes = random_planes(&mut rng, 5, 6, 1.0);
    let tp = TriPlane::new(planes, pose(40.0), 1.0).unwrap();
    let opposite = TriPlane::new(random_planes(&mut rng, 5, 6, 1.0), pose(220.0), 1.0).unwrap();
    let cfg = FusionConfig::default();
    let alone = render(std::slice::from_ref(&tp), 40.0, &cfg, 4);
    let with_opposite = render(&[tp, opposite], 40.0, &cfg, 4);
    assert!(alone.max_abs_diff(&with_opposite).unwrap() < 1e-12);
}

#[test]
fn order_of_views_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tps: Vec<_> = [0.0, 100.0, 230.0]
        .iter()
        .map(|&a| TriPlane::new(random_planes(&mut rng, 5, 6, 1.0), pose(a), 1.0).unwrap())
        .collect();
    let cfg = FusionConfig::default();
    let a = render(&tps, 70.0, &cfg, 4);
    let b = render(&[tps[2].clone(), tps[0].clone(), tps[1].clone()], 70.0, &cfg, 4);
    assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
}

/// Planes whose field depends only on height, so every elevation-zero
/// frame describes the same field when the planes cover the scene cube.
fn height_only_planes(c: usize, p: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[3 * c, p, p]);
    let area = p * p;
    for ch in 0..c {
        for row in 0..p {
            for col in 0..p {
                let v = ((row as f64) * 0.37 + ch as f64).sin();
                t.data_mut()[ch * area + row * p + col] = v; // xy: rows follow -y
                t.data_mut()[(2 * c + ch) * area + row * p + col] = 0.5 * v; // yz: rows follow -y
            }
        }
    }
    t
}

#[test]
fn identical_fields_at_symmetric_azimuths() {
    let planes = height_only_planes(5, 8);
    let plus = TriPlane::new(planes.clone(), pose(60.0), 1.5).unwrap();
    let minus = TriPlane::new(planes, pose(-60.0), 1.5).unwrap();
    let cfg = FusionConfig::default();
    let both = render(&[plus.clone(), minus.clone()], 0.0, &cfg, 4);
    let a = render(&[plus], 0.0, &cfg, 4);
    let b = render(&[minus], 0.0, &cfg, 4);
    assert!(both.max_abs_diff(&a).unwrap() < 1e-5);
    assert!(both.max_abs_diff(&b).unwrap() < 1e-5);
}

#[test]
fn uniform_weights_differ_from_cosine_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tps: Vec<_> = [0.0, 120.0]
        .iter()
        .map(|&a| TriPlane::new(random_planes(&mut rng, 5, 6, 1.0), pose(a), 1.0).unwrap())
        .collect();
    let cfg = FusionConfig::default();
    let weighted = render(&tps, 20.0, &cfg, 4);
    let uniform = render(&tps, 20.0, &FusionConfig { uniform_weights: true, ..cfg }, 4);
    assert!(weighted.max_abs_diff(&uniform).unwrap() > 1e-6);
}

#[test]
fn all_opposite_views_fall_back_to_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let planes = random_planes(&mut rng, 5, 6, 1.0);
    let tps = vec![
        TriPlane::new(planes.clone(), pose(180.0), 1.0).unwrap(),
        TriPlane::new(planes, pose(180.0), 1.0).unwrap(),
    ];
    let (w, b) = identity_readout(5);
    let out = render_fused(&tps, &pose(0.0), &FusionConfig::default(), Readout { weight: &w, bias: &b }, 3, 3).unwrap();
    assert!(out.fallback);
    assert!(out.grid.all_finite());
    let single = render(&tps[..1], 0.0, &FusionConfig::default(), 3);
    assert!(out.grid.max_abs_diff(&single).unwrap() < 1e-12);
}

#[test]
fn rays_missing_the_cube_are_zero() {
    // A narrow field of view from far away: every ray still hits; a wide one
    // from close by leaves the corner rays outside the cube.
    let far = CameraPose::from_degrees(0.0, 0.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let tp = TriPlane::new(random_planes(&mut rng, 5, 6, 1.0), far, 1.0).unwrap();
    let cfg = FusionConfig { fov_deg: 100.0, ..FusionConfig::default() };
    let (w, b) = identity_readout(5);
    let out = render_fused(&[tp], &far, &cfg, Readout { weight: &w, bias: &b }, 8, 8).unwrap();
    let op = out.opacity.data();
    assert_eq!(op[0], 0.0);
    assert!(op[3 * 8 + 3] > 0.0);
    for k in 0..4 {
        assert_eq!(out.grid.data()[k * 64], 0.0);
    }
    assert!(op.iter().all(|&o| (0.0..=1.0).contains(&o)));
}

#[test]
fn sample_count_converges() {
    // Smooth field on planes large enough that no sample is clipped.
    let planes = Tensor::from_fn(&[15, 8, 8], |i| {
        let (ch, row, col) = (i / 64, (i / 8) % 8, i % 8);
        0.5 * ((row as f64) * 0.4 + ch as f64).sin() * ((col as f64) * 0.3).cos()
    });
    let tp = TriPlane::new(planes, pose(10.0), 1.8).unwrap();
    let lo =
        render(std::slice::from_ref(&tp), 30.0, &FusionConfig { samples_per_ray: 128, ..FusionConfig::default() }, 4);
    let hi = render(&[tp], 30.0, &FusionConfig { samples_per_ray: 256, ..FusionConfig::default() }, 4);
    let rms = (lo.data().iter().zip(hi.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / lo.numel() as f64).sqrt();
    assert!(rms < 1e-3, "{rms}");
}

fn render_fd(decode_before: bool, sampling: Sampling) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (c, p) = (4, 5);
    let mut ps = ParamSet::new();
    ps.insert("planes", Tensor::from_fn(&[2, 3 * c, p, p], |_| rng.random_range(-1.0..1.0)), true).unwrap();
    let probe = Tensor::from_fn(&[2, c - 1, 2, 2], |_| rng.random_range(-1.0..1.0));
    let jobs = vec![
        RenderJob { views: vec![0, 1], frames: vec![pose(0.0), pose(75.0)], target: pose(30.0) },
        RenderJob { views: vec![1], frames: vec![pose(75.0)], target: pose(160.0) },
    ];
    let cfg = FusionConfig { samples_per_ray: 8, decode_before_aggregate: decode_before, ..FusionConfig::default() };
    let eval = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = g.bind(ps);
        let out = g.render_triplanes(b.get("planes")?, 1.2, &jobs, &cfg, 2, 2, sampling)?;
        let l = g.dot_const(out.payload, probe.clone())?;
        let grads = grad(&g, l, ps, &b)?;
        Ok::<_, tvf_core::Error>((g.value(l).item()?, grads))
    };
    let (_, analytic) = eval(&ps).unwrap();
    assert!(analytic["planes"].max_abs() > 0.0);
    let report = fd_check(&ps, &analytic, 1e-5, Some(200), &mut rng, |p| eval(p).map(|r| r.0)).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn render_gradient_matches_finite_differences() {
    render_fd(false, Sampling::Midpoint);
    render_fd(true, Sampling::Midpoint);
    render_fd(false, Sampling::Jittered { seed: 3 });
}
