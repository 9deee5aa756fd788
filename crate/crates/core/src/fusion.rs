//! Composited volume rendering of several input-view tri-planes into one
//! target-view feature grid.
//!
//! Each target ray is sampled at stratified midpoints between its entry and
//! exit of the `[-1, 1]^3` scene cube. Every sample queries all tri-planes,
//! the per-view features are blended with azimuth-proximity weights, density
//! and payload are decoded, and the payload is alpha-composited front to back.
//! A learned 1x1 readout then maps the payload channels to the latent.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{ray_cube_interval, target_rays, view_delta, CameraPose, RayBatch, Vec3};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ops::{sigmoid, softplus};
use crate::tensor::{grid_sample_forward, Corners, Function, Graph, Tensor, Var};
use crate::triplane::{LocalFrame, TriPlane};

/// Half-width of the scene cube that bounds every ray segment.
pub const SCENE_EXTENT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub samples_per_ray: usize,
    pub fov_deg: f64,
    /// Decode density per view and blend densities, instead of blending raw
    /// features and decoding once.
    pub decode_before_aggregate: bool,
    /// Ablation: ignore azimuth proximity and weight every view equally.
    pub uniform_weights: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { samples_per_ray: 32, fov_deg: 50.0, decode_before_aggregate: false, uniform_weights: false }
    }
}

/// Where along each stratum a ray sample sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Stratum midpoints; used for evaluation.
    Midpoint,
    /// Uniform jitter inside each stratum from a per-ray stream of `seed`.
    Jittered { seed: u64 },
}

/// `(cos d_theta + 1) / 2`.
pub fn view_weight(d_theta: f64) -> f64 {
    (d_theta.cos() + 1.0) / 2.0
}

/// Weights scaled to sum to one. When every weight is zero the result is
/// uniform, a warning is logged, and the flag is set.
pub fn normalize_weights(lambdas: &[f64]) -> Result<(Vec<f64>, bool)> {
    if lambdas.is_empty() {
        return Err(Error::Empty("view weights"));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Invalid(alloc::format!("view weights {lambdas:?} must be finite and non-negative")));
    }
    let total: f64 = lambdas.iter().sum();
    if total > 0.0 {
        return Ok((lambdas.iter().map(|l| l / total).collect(), false));
    }
    log::warn!("all {} input views face away from the target; falling back to uniform weights", lambdas.len());
    let n = lambdas.len() as f64;
    Ok((vec![1.0 / n; lambdas.len()], true))
}

/// `sum_i w_i f_i` over per-view feature vectors of equal length.
pub fn aggregate_point<T: Real>(features: &[&[T]], weights: &[f64]) -> Result<Vec<T>> {
    let first = features.first().ok_or(Error::Empty("aggregate_point"))?;
    if features.len() != weights.len() || features.iter().any(|f| f.len() != first.len()) {
        return Err(Error::shape("aggregate_point", &[features.len(), first.len()], &[weights.len()]));
    }
    let mut out = vec![T::zero(); first.len()];
    for (f, &w) in features.iter().zip(weights) {
        let w = T::c(w);
        for (o, &v) in out.iter_mut().zip(f.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayIntegral<T> {
    pub value: Vec<T>,
    pub opacity: T,
    /// Transmittance in front of each sample.
    pub transmittance: Vec<T>,
}

/// Front-to-back alpha compositing of `S` samples with `payloads [S, D]`.
pub fn integrate_ray<T: Real>(sigmas: &[T], payloads: &[T], deltas: &[T]) -> Result<RayIntegral<T>> {
    let s = sigmas.len();
    if s == 0 || deltas.len() != s || !payloads.len().is_multiple_of(s) {
        return Err(Error::shape("integrate_ray", &[s, payloads.len()], &[deltas.len()]));
    }
    let d = payloads.len() / s;
    let mut value = vec![T::zero(); d];
    let mut trans = T::one();
    let mut opacity = T::zero();
    let mut transmittance = Vec::with_capacity(s);
    for j in 0..s {
        let tau = sigmas[j] * deltas[j];
        let alpha = -(-tau).exp_m1();
        let w = trans * alpha;
        transmittance.push(trans);
        for (v, &p) in value.iter_mut().zip(&payloads[j * d..(j + 1) * d]) {
            *v += w * p;
        }
        opacity += w;
        trans *= (-tau).exp();
    }
    Ok(RayIntegral { value, opacity, transmittance })
}

/// One target view rendered from a subset of the tri-plane batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderJob {
    /// Indices into the leading axis of the tri-plane batch.
    pub views: Vec<usize>,
    /// Frame of each listed tri-plane.
    pub frames: Vec<CameraPose>,
    pub target: CameraPose,
}

#[derive(Clone, Debug)]
struct JobPlan<T> {
    views: Vec<usize>,
    frames: Vec<LocalFrame>,
    weights: Vec<T>,
    rays: RayBatch,
}

/// Payload `[B, C-1, H, W]` (differentiable) and opacity `[B, 1, H, W]`.
pub struct RenderOutput<T> {
    pub payload: Var,
    pub opacity: Tensor<T>,
    /// Per job: whether the all-zero weight fallback was taken.
    pub fallback: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Geometry {
    channels: usize,
    res: usize,
    extent: f64,
    samples: usize,
    decode_before: bool,
    sampling: Sampling,
    pixels: usize,
}

impl Geometry {
    fn view_len(&self) -> usize {
        3 * self.plane_len()
    }

    fn plane_len(&self) -> usize {
        self.channels * self.res * self.res
    }

    /// Sample points and the common step length, or `None` for a miss.
    fn ray_points(&self, rays: &RayBatch, r: usize, stream: u64, out: &mut Vec<Vec3>) -> Option<f64> {
        out.clear();
        let (o, d) = (rays.origins[r], rays.directions[r]);
        let (t0, t1) = ray_cube_interval(o, d, SCENE_EXTENT)?;
        let s = self.samples;
        let step = (t1 - t0) / s as f64;
        let mut rng = match self.sampling {
            Sampling::Midpoint => None,
            Sampling::Jittered { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                Some(rng)
            }
        };
        for j in 0..s {
            let u = match rng.as_mut() {
                Some(rng) => rng.random::<f64>(),
                None => 0.5,
            };
            let t = t0 + (j as f64 + u) * step;
            out.push([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
        }
        Some(step)
    }
}

/// Per-sample state of one ray, reused between samples.
struct RayScratch<T> {
    points: Vec<Vec3>,
    corners: Vec<Option<[Corners<T>; 3]>>,
    /// `[S, V, C]` per-view features.
    feats: Vec<T>,
    sigma: Vec<T>,
    /// `[S, C-1]` blended payload.
    payload: Vec<T>,
}

impl<T: Real> RayScratch<T> {
    fn new() -> Self {
        RayScratch {
            points: Vec::new(),
            corners: Vec::new(),
            feats: Vec::new(),
            sigma: Vec::new(),
            payload: Vec::new(),
        }
    }

    /// Query and decode every sample of ray `r`; returns the step length.
    fn evaluate(&mut self, geo: &Geometry, plan: &JobPlan<T>, planes: &[T], r: usize, stream: u64) -> Option<f64> {
        let step = geo.ray_points(&plan.rays, r, stream, &mut self.points)?;
        let (c, nv, s) = (geo.channels, plan.views.len(), geo.samples);
        self.corners.clear();
        self.feats.clear();
        self.feats.resize(s * nv * c, T::zero());
        self.sigma.clear();
        self.payload.clear();
        self.payload.resize(s * (c - 1), T::zero());
        let mut agg = vec![T::zero(); c];
        for j in 0..s {
            agg.iter_mut().for_each(|a| *a = T::zero());
            let mut sigma = T::zero();
            for (i, (&view, frame)) in plan.views.iter().zip(&plan.frames).enumerate() {
                let corners = frame.corners::<T>(self.points[j], geo.res);
                let f = &mut self.feats[(j * nv + i) * c..(j * nv + i + 1) * c];
                if let Some(cs) = &corners {
                    let base = view * geo.view_len();
                    for (k, corner) in cs.iter().enumerate() {
                        let plane = &planes[base + k * geo.plane_len()..base + (k + 1) * geo.plane_len()];
                        grid_sample_forward(plane, c, geo.res, corner, T::one(), f);
                    }
                }
                let w = plan.weights[i];
                for (a, &v) in agg.iter_mut().zip(f.iter()) {
                    *a += w * v;
                }
                if geo.decode_before {
                    sigma += w * softplus(f[0]);
                }
                self.corners.push(corners);
            }
            if !geo.decode_before {
                sigma = softplus(agg[0]);
            }
            self.sigma.push(sigma);
            self.payload[j * (c - 1)..(j + 1) * (c - 1)].copy_from_slice(&agg[1..]);
        }
        Some(step)
    }
}

fn plan_jobs<T: Real>(
    jobs: &[RenderJob],
    nviews: usize,
    extent: f64,
    h: usize,
    w: usize,
    cfg: &FusionConfig,
) -> Result<(Vec<JobPlan<T>>, Vec<bool>)> {
    let mut plans = Vec::with_capacity(jobs.len());
    let mut fallback = Vec::with_capacity(jobs.len());
    for job in jobs {
        if job.views.is_empty() {
            return Err(Error::Empty("render job views"));
        }
        if job.views.len() != job.frames.len() || job.views.iter().any(|&v| v >= nviews) {
            return Err(Error::shape("render job", &job.views, &[job.frames.len(), nviews]));
        }
        let lambdas: Vec<f64> = job
            .frames
            .iter()
            .map(|f| match cfg.uniform_weights {
                true => 1.0,
                false => view_weight(view_delta(f, &job.target).d_theta),
            })
            .collect();
        let (weights, fell_back) = normalize_weights(&lambdas)?;
        fallback.push(fell_back);
        plans.push(JobPlan {
            views: job.views.clone(),
            frames: job.frames.iter().map(|f| LocalFrame::new(f, extent)).collect(),
            weights: weights.into_iter().map(T::c).collect(),
            rays: target_rays(&job.target, h, w, cfg.fov_deg)?,
        });
    }
    Ok((plans, fallback))
}

struct RenderFn<T> {
    geo: Geometry,
    plans: Vec<JobPlan<T>>,
}

impl<T: Real> Function<T> for RenderFn<T> {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = &self.geo;
        let planes = x[0].data();
        let (c, s, hw) = (geo.channels, geo.samples, geo.pixels);
        let gd = g.data();
        let mut dplanes = vec![T::zero(); planes.len()];
        let mut scratch = RayScratch::new();
        let mut dfeat = vec![T::zero(); c];
        let mut after = vec![T::zero(); s + 1];
        let mut ray_g = vec![T::zero(); c - 1];
        for (b, plan) in self.plans.iter().enumerate() {
            let nv = plan.views.len();
            for r in 0..hw {
                for (k, rg) in ray_g.iter_mut().enumerate() {
                    *rg = gd[(b * (c - 1) + k) * hw + r];
                }
                if ray_g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                let stream = (b * hw + r) as u64;
                let Some(step) = scratch.evaluate(geo, plan, planes, r, stream) else { continue };
                let delta = T::c(step);
                // Forward quantities: weights w_j, transmittance after each
                // sample, and s_j = <g, payload_j>.
                let mut trans = vec![T::one(); s + 1];
                let mut wts = vec![T::zero(); s];
                let mut sdot = vec![T::zero(); s];
                for j in 0..s {
                    let tau = scratch.sigma[j] * delta;
                    wts[j] = trans[j] * -(-tau).exp_m1();
                    trans[j + 1] = trans[j] * (-tau).exp();
                    sdot[j] =
                        ray_g.iter().zip(&scratch.payload[j * (c - 1)..(j + 1) * (c - 1)]).map(|(&a, &p)| a * p).sum();
                }
                after[s] = T::zero();
                for j in (0..s).rev() {
                    after[j] = after[j + 1] + wts[j] * sdot[j];
                }
                for j in 0..s {
                    let da = trans[j + 1] * sdot[j] - after[j + 1];
                    let dsigma = da * delta;
                    let agg0 = if geo.decode_before {
                        T::zero()
                    } else {
                        (0..nv).map(|i| plan.weights[i] * scratch.feats[(j * nv + i) * c]).sum::<T>()
                    };
                    for (i, &view) in plan.views.iter().enumerate() {
                        let Some(cs) = &scratch.corners[j * nv + i] else { continue };
                        let w = plan.weights[i];
                        let f0 = scratch.feats[(j * nv + i) * c];
                        let dsig_df0 = if geo.decode_before { sigmoid(f0) } else { sigmoid(agg0) };
                        dfeat[0] = w * dsigma * dsig_df0;
                        for k in 1..c {
                            dfeat[k] = w * wts[j] * ray_g[k - 1];
                        }
                        let base = view * geo.view_len();
                        for (p, corner) in cs.iter().enumerate() {
                            let plane = &mut dplanes[base + p * geo.plane_len()..base + (p + 1) * geo.plane_len()];
                            let area = geo.res * geo.res;
                            for (ch, &df) in dfeat.iter().enumerate() {
                                if df == T::zero() {
                                    continue;
                                }
                                for q in 0..4 {
                                    plane[ch * area + corner.idx[q]] += df * corner.w[q];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(x[0].shape(), dplanes)?)])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Render every job from `planes [V, 3C, P, P]`.
    #[allow(clippy::too_many_arguments)]
    pub fn render_triplanes(
        &mut self,
        planes: Var,
        extent: f64,
        jobs: &[RenderJob],
        cfg: &FusionConfig,
        height: usize,
        width: usize,
        sampling: Sampling,
    ) -> Result<RenderOutput<T>> {
        let sp = self.shape(planes).to_vec();
        if sp.len() != 4 || !sp[1].is_multiple_of(3) || sp[1] / 3 < 2 || sp[2] != sp[3] || sp[2] < 2 {
            return Err(Error::shape("render_triplanes", &sp, &[]));
        }
        if jobs.is_empty() {
            return Err(Error::Empty("render jobs"));
        }
        if cfg.samples_per_ray < 2 {
            return Err(Error::Invalid(alloc::format!("samples_per_ray = {} must be at least 2", cfg.samples_per_ray)));
        }
        if extent.is_nan() || extent <= 0.0 {
            return Err(Error::Invalid(alloc::format!("tri-plane extent {extent} must be positive")));
        }
        let geo = Geometry {
            channels: sp[1] / 3,
            res: sp[2],
            extent,
            samples: cfg.samples_per_ray,
            decode_before: cfg.decode_before_aggregate,
            sampling,
            pixels: height * width,
        };
        let (plans, fallback) = plan_jobs::<T>(jobs, sp[0], geo.extent, height, width, cfg)?;
        let (c, hw) = (geo.channels, geo.pixels);
        let mut out = vec![T::zero(); jobs.len() * (c - 1) * hw];
        let mut opacity = vec![T::zero(); jobs.len() * hw];
        {
            let planes_d = self.value(planes).data();
            let mut scratch = RayScratch::new();
            let mut deltas = vec![T::zero(); geo.samples];
            for (b, plan) in plans.iter().enumerate() {
                for r in 0..hw {
                    let stream = (b * hw + r) as u64;
                    let Some(step) = scratch.evaluate(&geo, plan, planes_d, r, stream) else { continue };
                    deltas.iter_mut().for_each(|d| *d = T::c(step));
                    let ray = integrate_ray(&scratch.sigma, &scratch.payload, &deltas)?;
                    for (k, v) in ray.value.iter().enumerate() {
                        out[(b * (c - 1) + k) * hw + r] = *v;
                    }
                    opacity[b * hw + r] = ray.opacity;
                }
            }
        }
        let value = Tensor::new(&[jobs.len(), c - 1, height, width], out)?;
        let opacity = Tensor::new(&[jobs.len(), 1, height, width], opacity)?;
        let payload = self.apply("render_triplanes", &[planes], value, RenderFn { geo, plans })?;
        Ok(RenderOutput { payload, opacity, fallback })
    }
}

/// A rendered target-view latent.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedLatent<T> {
    /// `[4, H, W]` after the readout.
    pub grid: Tensor<T>,
    /// `[H, W]`.
    pub opacity: Tensor<T>,
    pub target: CameraPose,
    pub fallback: bool,
}

/// Readout weights: `w [4, C-1, 1, 1]` and `b [4]`.
#[derive(Clone, Copy, Debug)]
pub struct Readout<'r, T> {
    pub weight: &'r Tensor<T>,
    pub bias: &'r Tensor<T>,
}

/// Evaluation-mode rendering of loose tri-planes, without gradients.
pub fn render_fused<T: Real>(
    tps: &[TriPlane<T>],
    target: &CameraPose,
    cfg: &FusionConfig,
    readout: Readout<'_, T>,
    height: usize,
    width: usize,
) -> Result<FusedLatent<T>> {
    let first = tps.first().ok_or(Error::Empty("render_fused tri-planes"))?;
    if tps.iter().any(|t| t.planes.shape() != first.planes.shape() || t.extent != first.extent) {
        return Err(Error::Invalid("tri-planes differ in shape or extent".into()));
    }
    let stacked = Tensor::stack(&tps.iter().map(|t| &t.planes).collect::<Vec<_>>())?;
    let job =
        RenderJob { views: (0..tps.len()).collect(), frames: tps.iter().map(|t| t.frame).collect(), target: *target };
    let mut g = Graph::new();
    let planes = g.constant(stacked);
    let out = g.render_triplanes(planes, first.extent, &[job], cfg, height, width, Sampling::Midpoint)?;
    let w = g.constant(readout.weight.clone());
    let b = g.constant(readout.bias.clone());
    let y = g.conv2d(out.payload, w, Some(b), 1, 0)?;
    let grid = g.value(y).clone().reshaped(&[readout.weight.shape()[0], height, width])?;
    Ok(FusedLatent {
        grid,
        opacity: out.opacity.reshaped(&[height, width])?,
        target: *target,
        fallback: out.fallback[0],
    })
}
