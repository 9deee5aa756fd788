//! Procedural objects and a first-hit latent renderer.
//!
//! An object is a handful of axis-aligned boxes and spheres, each carrying a
//! constant 4-channel feature. Rendering marches every pixel ray through the
//! scene cube and returns the feature of the first primitive it enters, or
//! zeros for background. The rendered grid stands in for an encoded image.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{ray_cube_interval, target_rays, CameraPose, Vec3};
use crate::error::{Error, Result};
use crate::fusion::SCENE_EXTENT;
use crate::lifting::{LatentImage, LATENT_CHANNELS};
use crate::real::Real;
use crate::tensor::Tensor;

/// Half-width of the box every primitive fits inside.
pub const OBJECT_BOUND: f64 = 0.8;
/// Ray-march step of the renderer.
pub const MARCH_STEP: f64 = 2.0 / 64.0;
/// Camera distance of every generated view.
pub const VIEW_RADIUS: f64 = 2.0;
/// Elevation range, in degrees, of sampled training views.
pub const ELEVATION_RANGE_DEG: f64 = 30.0;
/// Held-out targets per evaluation object.
pub const EVAL_TARGETS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Box { half: Vec3 },
    Sphere { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub feature: [f64; LATENT_CHANNELS],
}

impl Primitive {
    pub fn contains(&self, p: Vec3) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match self.shape {
            Shape::Box { half } => (0..3).all(|k| d[k].abs() <= half[k]),
            Shape::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
        }
    }

    fn mirrored(&self, axis: usize) -> Primitive {
        let mut m = *self;
        m.center[axis] = -m.center[axis];
        m
    }

    fn same_as(&self, other: &Primitive) -> bool {
        const TOL: f64 = 1e-9;
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= TOL);
        let shape = match (self.shape, other.shape) {
            (Shape::Box { half: a }, Shape::Box { half: b }) => close(&a, &b),
            (Shape::Sphere { radius: a }, Shape::Sphere { radius: b }) => (a - b).abs() <= TOL,
            _ => false,
        };
        shape && close(&self.center, &other.center) && close(&self.feature, &other.feature)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticObject {
    pub primitives: Vec<Primitive>,
    pub seed: u64,
}

impl SyntheticObject {
    pub fn empty(seed: u64) -> Self {
        SyntheticObject { primitives: Vec::new(), seed }
    }

    /// True when mirroring about each of the planes x=0, y=0 and z=0
    /// changes the object.
    pub fn is_mirror_asymmetric(&self) -> bool {
        (0..3).all(|axis| !self.primitives.iter().all(|p| self.primitives.iter().any(|q| q.same_as(&p.mirrored(axis)))))
    }

    /// Feature of the first primitive (in list order) containing `p`.
    pub fn feature_at(&self, p: Vec3) -> Option<&[f64; LATENT_CHANNELS]> {
        self.primitives.iter().find(|q| q.contains(p)).map(|q| &q.feature)
    }
}

fn feature<R: Rng>(rng: &mut R) -> [f64; LATENT_CHANNELS] {
    core::array::from_fn(|_| rng.random_range(-1.0..=1.0))
}

/// The marker: a small box whose center sits at least 0.3 away from every
/// coordinate plane.
fn marker<R: Rng>(rng: &mut R) -> Primitive {
    let half: Vec3 = core::array::from_fn(|_| rng.random_range(0.12..0.22));
    let center: Vec3 = core::array::from_fn(|k| {
        let mag = rng.random_range(0.3..OBJECT_BOUND - half[k]);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    Primitive { shape: Shape::Box { half }, center, feature: feature(rng) }
}

fn filler<R: Rng>(rng: &mut R) -> Primitive {
    let shape = if rng.random_bool(0.5) {
        Shape::Box { half: core::array::from_fn(|_| rng.random_range(0.15..0.4)) }
    } else {
        Shape::Sphere { radius: rng.random_range(0.2..0.45) }
    };
    let reach: Vec3 = match shape {
        Shape::Box { half } => half,
        Shape::Sphere { radius } => [radius; 3],
    };
    let center = core::array::from_fn(|k| {
        let lim = OBJECT_BOUND - reach[k];
        rng.random_range(-lim..=lim)
    });
    Primitive { shape, center, feature: feature(rng) }
}

/// Deterministic object for `seed`: the marker plus 2 to 5 more
/// primitives, all inside `[-0.8, 0.8]^3`.
pub fn gen_object(seed: u64) -> SyntheticObject {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let count = rng.random_range(3..=6);
        let mut primitives = vec![marker(&mut rng)];
        primitives.extend((1..count).map(|_| filler(&mut rng)));
        let obj = SyntheticObject { primitives, seed };
        if obj.is_mirror_asymmetric() {
            return obj;
        }
    }
}

/// Render the `[4, size, size]` latent seen from `pose`.
pub fn render_latent<T: Real>(
    obj: &SyntheticObject,
    pose: &CameraPose,
    size: usize,
    fov_deg: f64,
) -> Result<LatentImage<T>> {
    let rays = target_rays(pose, size, size, fov_deg)?;
    let plane = size * size;
    let mut data = vec![T::zero(); LATENT_CHANNELS * plane];
    for (pix, (o, d)) in rays.origins.iter().zip(&rays.directions).enumerate() {
        let Some((t0, t1)) = ray_cube_interval(*o, *d, SCENE_EXTENT) else {
            continue;
        };
        let mut k = 0usize;
        loop {
            let t = t0 + (k as f64 + 0.5) * MARCH_STEP;
            if t > t1 {
                break;
            }
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            if let Some(f) = obj.feature_at(p) {
                for (c, &v) in f.iter().enumerate() {
                    data[c * plane + pix] = T::c(v);
                }
                break;
            }
            k += 1;
        }
    }
    LatentImage::new(Tensor::new(&[LATENT_CHANNELS, size, size], data)?, *pose)
}

/// Poses and their renders for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet<T> {
    pub seed: u64,
    pub views: Vec<LatentImage<T>>,
}

impl<T: Real> ViewSet<T> {
    pub fn render(obj: &SyntheticObject, poses: &[CameraPose], size: usize, fov_deg: f64) -> Result<Self> {
        let views = poses.iter().map(|p| render_latent(obj, p, size, fov_deg)).collect::<Result<Vec<_>>>()?;
        Ok(ViewSet { seed: obj.seed, views })
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.views.iter().map(|v| v.pose).collect()
    }
}

/// `n` azimuths evenly spread over the full turn at zero elevation.
pub fn ring_poses(n: usize) -> Result<Vec<CameraPose>> {
    (0..n).map(|i| CameraPose::from_degrees(360.0 * i as f64 / n as f64, 0.0, VIEW_RADIUS)).collect()
}

/// Front, back and random inputs plus an independent target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingPoses {
    pub inputs: [CameraPose; 3],
    pub target: CameraPose,
}

fn random_pose<R: Rng + ?Sized>(rng: &mut R) -> Result<CameraPose> {
    let theta = rng.random_range(0.0..360.0);
    let phi = rng.random_range(-ELEVATION_RANGE_DEG..=ELEVATION_RANGE_DEG);
    CameraPose::from_degrees(theta, phi, VIEW_RADIUS)
}

/// Draws in a fixed order: front azimuth, front elevation, random view,
/// target.
pub fn sample_training_poses<R: Rng + ?Sized>(rng: &mut R) -> Result<TrainingPoses> {
    let front = random_pose(rng)?;
    let back = CameraPose::new(front.theta + core::f64::consts::PI, front.phi, VIEW_RADIUS)?;
    let random = random_pose(rng)?;
    let target = random_pose(rng)?;
    Ok(TrainingPoses { inputs: [front, back, random], target })
}

/// Rendered training quadruple.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingViews<T> {
    pub inputs: Vec<LatentImage<T>>,
    pub target: LatentImage<T>,
}

pub fn sample_training_views<T: Real, R: Rng + ?Sized>(
    obj: &SyntheticObject,
    rng: &mut R,
    size: usize,
    fov_deg: f64,
) -> Result<TrainingViews<T>> {
    let poses = sample_training_poses(rng)?;
    render_training_views(obj, &poses, size, fov_deg)
}

pub fn render_training_views<T: Real>(
    obj: &SyntheticObject,
    poses: &TrainingPoses,
    size: usize,
    fov_deg: f64,
) -> Result<TrainingViews<T>> {
    Ok(TrainingViews {
        inputs: poses.inputs.iter().map(|p| render_latent(obj, p, size, fov_deg)).collect::<Result<Vec<_>>>()?,
        target: render_latent(obj, &poses.target, size, fov_deg)?,
    })
}

/// Input azimuths of the view-count sweep.
pub fn eval_input_azimuths(n: usize) -> Result<&'static [f64]> {
    match n {
        1 => Ok(&[0.0]),
        2 => Ok(&[0.0, 180.0]),
        3 => Ok(&[0.0, 90.0, 180.0]),
        4 => Ok(&[0.0, 90.0, 180.0, 270.0]),
        _ => Err(Error::Invalid(alloc::format!("view count {n} outside 1..=4"))),
    }
}

/// Sweep inputs at zero elevation and eight targets at `22.5 + 45 k`
/// degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoses {
    pub inputs: Vec<CameraPose>,
    pub targets: Vec<CameraPose>,
}

pub fn eval_poses(n: usize) -> Result<EvalPoses> {
    let inputs = eval_input_azimuths(n)?
        .iter()
        .map(|&a| CameraPose::from_degrees(a, 0.0, VIEW_RADIUS))
        .collect::<Result<Vec<_>>>()?;
    let targets = (0..EVAL_TARGETS)
        .map(|k| CameraPose::from_degrees(22.5 + 45.0 * k as f64, 0.0, VIEW_RADIUS))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalPoses { inputs, targets })
}

/// Rendered inputs and targets of the sweep for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalViews<T> {
    pub inputs: ViewSet<T>,
    pub targets: ViewSet<T>,
}

pub fn eval_views<T: Real>(obj: &SyntheticObject, n: usize, size: usize, fov_deg: f64) -> Result<EvalViews<T>> {
    let poses = eval_poses(n)?;
    Ok(EvalViews {
        inputs: ViewSet::render(obj, &poses.inputs, size, fov_deg)?,
        targets: ViewSet::render(obj, &poses.targets, size, fov_deg)?,
    })
}

/// Index of the input whose azimuth is closest to `target`; ties go to the
/// earlier input.
pub fn closest_view(inputs: &[CameraPose], target: &CameraPose) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in inputs.iter().enumerate() {
        let d = crate::camera::wrap_angle(target.theta - p.theta).abs();
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Per-object seeds for a dataset split, drawn from `base`.
pub fn object_seeds(base: u64, stream: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    (0..count).map(|_| rng.random()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_ray_hits_filling_box() {
        let feature = [0.25, -0.5, 0.75, -1.0];
        let obj = SyntheticObject {
            primitives: vec![Primitive { shape: Shape::Box { half: [0.5; 3] }, center: [0.0; 3], feature }],
            seed: 0,
        };
        let pose = CameraPose::from_degrees(30.0, 10.0, VIEW_RADIUS).unwrap();
        let img = render_latent::<f64>(&obj, &pose, 16, 50.0).unwrap();
        for (c, &f) in feature.iter().enumerate() {
            assert_eq!(img.grid.data()[c * 256 + 8 * 16 + 8], f);
        }
    }

    #[test]
    fn closest_view_breaks_ties_toward_first() {
        let a = CameraPose::from_degrees(0.0, 0.0, 2.0).unwrap();
        let b = CameraPose::from_degrees(180.0, 0.0, 2.0).unwrap();
        let t = CameraPose::from_degrees(90.0, 0.0, 2.0).unwrap();
        assert_eq!(closest_view(&[a, b], &t), Some(0));
        assert_eq!(closest_view(&[], &t), None);
    }
}
