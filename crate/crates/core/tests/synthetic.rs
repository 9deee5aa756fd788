use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvf_core::camera::CameraPose;
use tvf_core::metrics::{mse, psnr, ssim, PSNR_IDENTICAL};
use tvf_core::synthetic::{
    closest_view, eval_input_azimuths, eval_poses, gen_object, object_seeds, render_latent, ring_poses,
    sample_training_poses, SyntheticObject, ELEVATION_RANGE_DEG, OBJECT_BOUND, VIEW_RADIUS,
};
use tvf_core::Tensor;

const FOV: f64 = 50.0;

fn pose(az: f64, el: f64) -> CameraPose {
    CameraPose::from_degrees(az, el, VIEW_RADIUS).unwrap()
}

fn rms_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    mse(a, b).unwrap().sqrt()
}

#[test]
fn objects_are_deterministic_per_seed() {
    assert_eq!(gen_object(7), gen_object(7));
    assert_ne!(gen_object(7), gen_object(8));
    let a = render_latent::<f32>(&gen_object(7), &pose(30.0, 10.0), 16, FOV).unwrap();
    let b = render_latent::<f32>(&gen_object(7), &pose(30.0, 10.0), 16, FOV).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hundred_seeds_are_asymmetric_and_bounded() {
    for seed in 0..100 {
        let obj = gen_object(seed);
        assert!(obj.is_mirror_asymmetric(), "seed {seed}");
        assert!((3..=6).contains(&obj.primitives.len()));
        for p in &obj.primitives {
            assert!(p.feature.iter().all(|v| v.abs() <= 1.0));
            assert!(p.center.iter().all(|c| c.abs() < OBJECT_BOUND));
        }
    }
}

#[test]
fn symmetric_object_is_detected() {
    let mut obj = SyntheticObject::empty(0);
    let mut p = gen_object(1).primitives[1];
    p.center = [0.0, 0.0, 0.0];
    obj.primitives.push(p);
    assert!(!obj.is_mirror_asymmetric());
}

#[test]
fn empty_scene_renders_zero() {
    let img = render_latent::<f32>(&SyntheticObject::empty(0), &pose(0.0, 0.0), 8, FOV).unwrap();
    assert!(img.grid.data().iter().all(|&v| v == 0.0));
}

#[test]
fn objects_are_visible_and_change_with_azimuth() {
    for seed in 0..20 {
        let obj = gen_object(seed);
        let a = render_latent::<f32>(&obj, &pose(0.0, 0.0), 16, FOV).unwrap();
        let b = render_latent::<f32>(&obj, &pose(90.0, 0.0), 16, FOV).unwrap();
        assert!(a.grid.max_abs() > 0.0);
        assert!(a.grid.max_abs_diff(&b.grid).unwrap() > 0.0);
    }
}

#[test]
fn full_turn_renders_identically() {
    for seed in 0..10 {
        let obj = gen_object(seed);
        for az in [0.0, 33.0, 181.5] {
            let a = render_latent::<f32>(&obj, &pose(az, 12.0), 16, FOV).unwrap();
            let b = render_latent::<f32>(&obj, &pose(az + 360.0, 12.0), 16, FOV).unwrap();
            assert_eq!(a.grid, b.grid);
        }
    }
}

// Regression bound frozen from the default generator: a 1 degree azimuth
// step moves the render by well under this RMS on every checked object.
const ONE_DEGREE_RMS_BOUND: f64 = 0.2;

#[test]
fn rendering_is_pose_continuous() {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let obj = gen_object(seed);
        for az in [0.0, 45.0, 137.0, 270.0] {
            let a = render_latent::<f32>(&obj, &pose(az, 5.0), 16, FOV).unwrap();
            let b = render_latent::<f32>(&obj, &pose(az + 1.0, 5.0), 16, FOV).unwrap();
            worst = worst.max(rms_diff(&a.grid, &b.grid));
        }
    }
    assert!(worst < ONE_DEGREE_RMS_BOUND, "{worst}");
}

/// Kolmogorov-Smirnov statistic of `xs` against uniform on `[0, 1)`.
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x)).fold(0.0, f64::max)
}

#[test]
fn target_azimuths_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let xs: Vec<f64> = (0..1000).map(|_| sample_training_poses(&mut rng).unwrap().target.theta_deg() / 360.0).collect();
    // Asymptotic critical value of the one-sample test at the 1% level.
    let critical = 1.628 / (1000f64).sqrt();
    let d = ks_uniform(xs);
    assert!(d < critical, "D = {d}, critical {critical}");
}

#[test]
fn ks_statistic_reference_values() {
    assert!((ks_uniform(vec![0.5]) - 0.5).abs() < 1e-12);
    assert!((ks_uniform(vec![0.0, 0.0]) - 1.0).abs() < 1e-12);
    assert!((ks_uniform(vec![0.25, 0.75]) - 0.25).abs() < 1e-12);
}

proptest! {
    #[test]
    fn training_quadruple_layout(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_training_poses(&mut rng).unwrap();
        let [front, back, random] = p.inputs;
        let diff = (back.theta_deg() - front.theta_deg()).rem_euclid(360.0);
        prop_assert!((diff - 180.0).abs() < 1e-9);
        prop_assert_eq!(front.phi, back.phi);
        for q in [front, random, p.target] {
            prop_assert!(q.phi_deg().abs() <= ELEVATION_RANGE_DEG + 1e-9);
            prop_assert_eq!(q.radius, 2.0);
        }
    }

    #[test]
    fn closest_view_minimizes_wrapped_azimuth(azs in prop::collection::vec(0.0..360.0f64, 1..5), t in 0.0..360.0f64) {
        let inputs: Vec<CameraPose> = azs.iter().map(|&a| pose(a, 0.0)).collect();
        let target = pose(t, 0.0);
        let i = closest_view(&inputs, &target).unwrap();
        let dist = |a: f64| { let d = (a - t).rem_euclid(360.0); d.min(360.0 - d) };
        let best = azs.iter().map(|&a| dist(a)).fold(f64::INFINITY, f64::min);
        prop_assert!((dist(azs[i]) - best).abs() < 1e-9);
    }
}

#[test]
fn sweep_protocol_poses() {
    assert_eq!(eval_input_azimuths(1).unwrap(), &[0.0]);
    assert_eq!(eval_input_azimuths(2).unwrap(), &[0.0, 180.0]);
    assert_eq!(eval_input_azimuths(3).unwrap(), &[0.0, 90.0, 180.0]);
    assert_eq!(eval_input_azimuths(4).unwrap(), &[0.0, 90.0, 180.0, 270.0]);
    assert!(eval_input_azimuths(0).is_err() && eval_input_azimuths(5).is_err());
    let p = eval_poses(4).unwrap();
    assert_eq!(p.targets.len(), 8);
    for (k, t) in p.targets.iter().enumerate() {
        assert!((t.theta_deg() - (22.5 + 45.0 * k as f64)).abs() < 1e-9);
        assert_eq!(t.phi, 0.0);
    }
}

#[test]
fn ring_and_seed_streams() {
    let r = ring_poses(12).unwrap();
    assert_eq!(r.len(), 12);
    assert!((r[3].theta_deg() - 90.0).abs() < 1e-9);
    assert_eq!(object_seeds(5, 0, 10), object_seeds(5, 0, 10));
    assert_eq!(object_seeds(5, 0, 10)[..4], object_seeds(5, 0, 4)[..]);
    assert_ne!(object_seeds(5, 0, 10), object_seeds(5, 1, 10));
}

#[test]
fn metrics_on_identical_and_shifted_latents() {
    let a = render_latent::<f32>(&gen_object(3), &pose(20.0, 0.0), 16, FOV).unwrap().grid;
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let b = Tensor::from_fn(a.shape(), |i| a.data()[i] + 0.2);
    // MSE 0.04 at peak 2: 10 log10(4 / 0.04) = 20 dB.
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    assert!(ssim(&a, &b).unwrap() < 1.0);
}
