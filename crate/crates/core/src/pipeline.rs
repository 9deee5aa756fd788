//! Model assembly, the three training stages and evaluation.
//!
//! Stage 0 fits the denoiser on (main view, delta, target) triples. Stage 1
//! fits the lifting network and readout on sparse-view reconstruction.
//! Stage 2 trains lifting, readout and injection together against a frozen
//! denoiser. Every step draws its data from its own RNG stream, so a run
//! resumed at step `k` replays exactly what an uninterrupted run would.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{view_delta, CameraPose, ViewDelta};
use crate::diffusion::{ddpm_sample, diffusion_loss, Backbone, BackboneConfig, NoiseDraw, NoiseSchedule, StepHook};
use crate::error::{Error, Result};
use crate::fusion::{render_fused, FusedLatent, FusionConfig, Readout, RenderJob, Sampling};
use crate::injection::InjectionNet;
use crate::lifting::{embed_batch, LatentImage, LiftConfig, LiftingNet, LATENT_CHANNELS};
use crate::metrics;
use crate::nn::{trunc_normal, INIT_STD};
use crate::real::Real;
use crate::synthetic::{closest_view, eval_views, sample_training_views, SyntheticObject, TrainingViews};
use crate::tensor::{grad, Adam, Bindings, Graph, ParamSet, Tensor, Var};

pub const READOUT_W: &str = "fuse.readout.w";
pub const READOUT_B: &str = "fuse.readout.b";

/// Name prefixes of the parameter groups, dot included.
pub const BACKBONE: &str = "backbone.";
pub const LIFT: &str = "lift.";
pub const FUSE: &str = "fuse.";
pub const INJECT: &str = "inject.";

/// Main-to-target azimuth deltas, in degrees, of the residual gating probe.
pub const GATING_SWEEP_DEG: [f64; 13] =
    [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0, 105.0, 120.0, 135.0, 150.0, 165.0, 180.0];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Side of every latent grid and tri-plane.
    pub latent_size: usize,
    pub backbone: BackboneConfig,
    pub lift: LiftConfig,
    /// Also sets the field of view of the latent renderer.
    pub fusion: FusionConfig,
    pub diffusion_steps: usize,
    /// Feed the noisy latent to the injection branch next to `f_t`.
    pub use_xt: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_size: 16,
            backbone: BackboneConfig::default(),
            lift: LiftConfig::default(),
            fusion: FusionConfig::default(),
            diffusion_steps: 100,
            use_xt: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub lifting: LiftingNet,
    pub injection: InjectionNet,
    pub schedule: NoiseSchedule,
}

/// How a target latent is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    /// Denoiser alone, conditioned on the closest input view.
    Backbone,
    /// Denoiser plus residuals injected from the fused latent of all inputs.
    MultiView,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let size = cfg.latent_size;
        if size < 2 || !size.is_multiple_of(2) {
            return Err(Error::Invalid(format!("latent size {size} must be even and at least 2")));
        }
        Ok(Model {
            backbone: Backbone::new(cfg.backbone.clone())?,
            lifting: LiftingNet::new(cfg.lift.clone())?,
            injection: InjectionNet::new(cfg.backbone.clone(), cfg.use_xt, size)?,
            schedule: NoiseSchedule::linear(cfg.diffusion_steps)?,
            cfg,
        })
    }

    pub fn init_backbone<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.backbone.init(ps, rng)
    }

    /// Lifting network and fusion readout.
    pub fn init_lifting<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.lifting.init(ps, rng)?;
        let c = self.cfg.lift.plane_channels - 1;
        ps.insert(READOUT_W, trunc_normal(rng, &[LATENT_CHANNELS, c, 1, 1], INIT_STD), true)?;
        ps.insert(READOUT_B, Tensor::zeros(&[LATENT_CHANNELS]), true)
    }

    /// Injection branch cloned from the backbone entries already in `ps`.
    pub fn init_injection<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        let source = ps.subset(Backbone::ENCODER_PREFIX);
        let mut fresh = ParamSet::new();
        self.injection.init_from_backbone(&source, &mut fresh, rng)?;
        ps.merge(fresh)
    }

    pub fn readout<'p, T: Real>(&self, ps: &'p ParamSet<T>) -> Result<Readout<'p, T>> {
        Ok(Readout { weight: ps.tensor(READOUT_W)?, bias: ps.tensor(READOUT_B)? })
    }

    fn fov(&self) -> f64 {
        self.cfg.fusion.fov_deg
    }

    /// Lift every view toward `target` and render the fused latent.
    pub fn fuse<T: Real>(
        &self,
        ps: &ParamSet<T>,
        views: &[LatentImage<T>],
        target: &CameraPose,
    ) -> Result<FusedLatent<T>> {
        let tps = self.lifting.lift_all(ps, views, target)?;
        let n = self.cfg.latent_size;
        render_fused(&tps, target, &self.cfg.fusion, self.readout(ps)?, n, n)
    }

    /// Differentiable fused latents `[B, 4, H, H]`, one per item.
    pub fn fused_graph<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bindings,
        items: &[(&[LatentImage<T>], CameraPose)],
        sampling: Sampling,
    ) -> Result<Var> {
        let mut grids = Vec::new();
        let mut deltas = Vec::new();
        let mut jobs = Vec::with_capacity(items.len());
        for (views, target) in items {
            if views.is_empty() {
                return Err(Error::Empty("fused_graph views"));
            }
            let first = grids.len();
            for v in views.iter() {
                grids.push(&v.grid);
                deltas.push(view_delta(&v.pose, target));
            }
            jobs.push(RenderJob {
                views: (first..grids.len()).collect(),
                frames: views.iter().map(|v| v.pose).collect(),
                target: *target,
            });
        }
        let x = g.constant(Tensor::stack(&grids)?);
        let e = g.constant(embed_batch(&deltas));
        let planes = self.lifting.forward(g, b, x, e)?;
        let n = self.cfg.latent_size;
        let out = g.render_triplanes(planes, self.cfg.lift.extent, &jobs, &self.cfg.fusion, n, n, sampling)?;
        let w = b.get(READOUT_W)?;
        let bias = b.get(READOUT_B)?;
        g.conv2d(out.payload, w, Some(bias), 1, 0)
    }

    /// Sample one target latent per request in a single batched chain.
    pub fn sample<T: Real, R: Rng + ?Sized>(
        &self,
        ps: &ParamSet<T>,
        requests: &[SampleRequest<'_, T>],
        mode: Conditioning,
        rng: &mut R,
        hook: Option<&mut StepHook<'_, T>>,
    ) -> Result<Tensor<T>> {
        if requests.is_empty() {
            return Err(Error::Empty("sample requests"));
        }
        let mut mains = Vec::with_capacity(requests.len());
        let mut deltas = Vec::with_capacity(requests.len());
        let mut fused = Vec::new();
        for r in requests {
            let poses: Vec<CameraPose> = r.views.iter().map(|v| v.pose).collect();
            let m = closest_view(&poses, &r.target).ok_or(Error::Empty("sample views"))?;
            mains.push(&r.views[m].grid);
            deltas.push(view_delta(&poses[m], &r.target));
            if mode == Conditioning::MultiView {
                fused.push(self.fuse(ps, r.views, &r.target)?.grid);
            }
        }
        let main = Tensor::stack(&mains)?;
        let embed: Tensor<T> = embed_batch(&deltas);
        match mode {
            Conditioning::Backbone => ddpm_sample(&self.backbone, ps, &self.schedule, &main, &embed, rng, None, hook),
            Conditioning::MultiView => {
                let f_t = Tensor::stack(&fused.iter().collect::<Vec<_>>())?;
                let mut injector = |g: &mut Graph<'_, T>, b: &Bindings, x_t: Var, steps: &[usize]| {
                    let fv = g.constant(f_t.clone());
                    let ev = g.constant(embed.clone());
                    self.injection.compute_residuals(g, b, fv, x_t, steps, ev)
                };
                ddpm_sample(&self.backbone, ps, &self.schedule, &main, &embed, rng, Some(&mut injector), hook)
            }
        }
    }
}

/// Input views and a target pose for [`Model::sample`].
#[derive(Clone, Copy, Debug)]
pub struct SampleRequest<'v, T> {
    pub views: &'v [LatentImage<T>],
    pub target: CameraPose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Backbone = 0,
    Lifting = 1,
    Joint = 2,
}

impl Stage {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Stage::Backbone),
            1 => Ok(Stage::Lifting),
            2 => Ok(Stage::Joint),
            _ => Err(Error::Invalid(format!("stage {i} is not 0, 1 or 2"))),
        }
    }

    /// Prefixes of the entries this stage updates.
    pub fn trained_prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::Backbone => &[BACKBONE],
            Stage::Lifting => &[LIFT, FUSE],
            Stage::Joint => &[LIFT, FUSE, INJECT],
        }
    }

    /// Prefixes that must be present before the stage starts.
    pub fn required_prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::Backbone | Stage::Lifting => &[],
            Stage::Joint => &[BACKBONE, LIFT],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training quadruples drawn per object per epoch.
    pub repeats: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub w_diff: f64,
    pub w_mse: f64,
    pub seed: u64,
}

impl StageConfig {
    pub fn defaults(stage: Stage) -> Self {
        let (epochs, repeats, lr) = match stage {
            Stage::Backbone => (10, 8, 1e-3),
            Stage::Lifting => (10, 4, 1e-3),
            Stage::Joint => (10, 2, 2e-4),
        };
        StageConfig {
            stage,
            epochs,
            batch_size: 8,
            repeats,
            lr,
            clip_norm: Some(1.0),
            w_diff: 1.0,
            w_mse: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::Invalid("batch_size and repeats must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.w_diff < 0.0 || self.w_mse < 0.0 {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, objects: usize) -> usize {
        (objects * self.repeats).div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, objects: usize) -> usize {
        self.epochs * self.steps_per_epoch(objects)
    }

    fn stream_base(&self) -> u64 {
        (self.stage.index() as u64) << 56
    }

    /// Object indices of step `step`.
    pub fn batch_indices(&self, objects: usize, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(objects);
        let (epoch, i) = (step / spe, step % spe);
        let mut order: Vec<usize> = (0..objects * self.repeats).map(|k| k % objects).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_base() | (1 << 48) | epoch as u64);
        order.shuffle(&mut rng);
        let end = ((i + 1) * self.batch_size).min(order.len());
        order[i * self.batch_size..end].to_vec()
    }

    /// RNG for everything drawn inside step `step`.
    pub fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_base() | step as u64);
        rng
    }
}

/// Parameters, optimizer and the number of completed steps.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub params: ParamSet<T>,
    pub optimizer: Adam<T>,
    pub step: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: ParamSet<T>, cfg: &StageConfig) -> Self {
        let mut optimizer = Adam::new(cfg.lr);
        optimizer.clip_norm = cfg.clip_norm;
        TrainState { params, optimizer, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub diffusion: Option<f64>,
    pub mse: Option<f64>,
}

struct Prepared<T> {
    views: Vec<TrainingViews<T>>,
    mains: Vec<usize>,
}

impl<T: Real> Prepared<T> {
    fn main_deltas(&self) -> Vec<ViewDelta> {
        self.views.iter().zip(&self.mains).map(|(v, &m)| view_delta(&v.inputs[m].pose, &v.target.pose)).collect()
    }

    fn stack<'s>(&'s self, pick: impl Fn(&'s TrainingViews<T>, usize) -> &'s Tensor<T>) -> Result<Tensor<T>> {
        let items: Vec<&Tensor<T>> = self.views.iter().zip(&self.mains).map(|(v, &m)| pick(v, m)).collect();
        Tensor::stack(&items)
    }
}

/// Set trainable flags for `stage` and check prerequisites.
pub fn prepare_params<T: Real>(stage: Stage, params: &mut ParamSet<T>) -> Result<()> {
    for p in stage.required_prefixes() {
        if !params.iter().any(|(n, _)| n.starts_with(p)) {
            return Err(Error::MissingParam(String::from(*p)));
        }
    }
    params.set_all_trainable(false);
    for p in stage.trained_prefixes() {
        params.set_trainable_prefix(p, true);
    }
    Ok(())
}

/// Fresh parameters for `stage`, merged into `prior` (earlier checkpoints).
pub fn init_stage_params<T: Real>(model: &Model, cfg: &StageConfig, mut prior: ParamSet<T>) -> Result<ParamSet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream_base() | (1 << 52));
    match cfg.stage {
        Stage::Backbone => model.init_backbone(&mut prior, &mut rng)?,
        Stage::Lifting => model.init_lifting(&mut prior, &mut rng)?,
        Stage::Joint => {
            prepare_params(Stage::Joint, &mut prior)?;
            model.init_injection(&mut prior, &mut rng)?;
        }
    }
    prepare_params(cfg.stage, &mut prior)?;
    Ok(prior)
}

/// Run steps `state.step .. until` (capped at the stage total), reporting
/// each loss to `on_step`.
pub fn train_stage<T: Real>(
    model: &Model,
    cfg: &StageConfig,
    objects: &[SyntheticObject],
    state: &mut TrainState<T>,
    until: usize,
    on_step: &mut dyn FnMut(&LossRecord),
) -> Result<()> {
    cfg.validate()?;
    if objects.is_empty() {
        return Err(Error::Empty("training objects"));
    }
    prepare_params(cfg.stage, &mut state.params)?;
    let total = cfg.total_steps(objects.len());
    let spe = cfg.steps_per_epoch(objects.len());
    while state.step < until.min(total) {
        let step = state.step;
        let batch = cfg.batch_indices(objects.len(), step);
        let mut rng = cfg.step_rng(step);
        let record = {
            let (loss, diffusion, mse, grads) = step_loss(model, cfg, objects, &batch, &state.params, &mut rng)?;
            state.optimizer.step(&mut state.params, &grads)?;
            LossRecord { step, epoch: step / spe, loss, diffusion, mse }
        };
        state.step += 1;
        on_step(&record);
    }
    Ok(())
}

type StepOut<T> = (f64, Option<f64>, Option<f64>, alloc::collections::BTreeMap<String, Tensor<T>>);

fn step_loss<T: Real>(
    model: &Model,
    cfg: &StageConfig,
    objects: &[SyntheticObject],
    batch: &[usize],
    params: &ParamSet<T>,
    rng: &mut ChaCha8Rng,
) -> Result<StepOut<T>> {
    let n = model.cfg.latent_size;
    let fov = model.fov();
    let mut views = Vec::with_capacity(batch.len());
    for &i in batch {
        views.push(sample_training_views::<T, _>(&objects[i], rng, n, fov)?);
    }
    let mains = views
        .iter()
        .map(|v| {
            let poses: Vec<CameraPose> = v.inputs.iter().map(|x| x.pose).collect();
            closest_view(&poses, &v.target.pose).ok_or(Error::Empty("training views"))
        })
        .collect::<Result<Vec<_>>>()?;
    let prep = Prepared { views, mains };
    let targets = prep.stack(|v, _| &v.target.grid)?;
    let jitter = Sampling::Jittered { seed: rng.random() };

    let mut g = Graph::new();
    let b = g.bind(params);
    let (loss, diffusion, mse) = match cfg.stage {
        Stage::Backbone => {
            let main = g.constant(prep.stack(|v, m| &v.inputs[m].grid)?);
            let embed = g.constant(embed_batch(&prep.main_deltas()));
            let draw = NoiseDraw::sample(rng, &model.schedule, targets.shape());
            let l = diffusion_loss(&model.backbone, &mut g, &b, &model.schedule, &targets, main, embed, &draw, None)?;
            (l, Some(l), None)
        }
        Stage::Lifting => {
            let items: Vec<(&[LatentImage<T>], CameraPose)> =
                prep.views.iter().map(|v| (&v.inputs[..], v.target.pose)).collect();
            let fused = model.fused_graph(&mut g, &b, &items, jitter)?;
            let tv = g.constant(targets.clone());
            let l = g.mse(fused, tv)?;
            (l, None, Some(l))
        }
        Stage::Joint => {
            let items: Vec<(&[LatentImage<T>], CameraPose)> =
                prep.views.iter().map(|v| (&v.inputs[..], v.target.pose)).collect();
            let fused = model.fused_graph(&mut g, &b, &items, jitter)?;
            let tv = g.constant(targets.clone());
            let mse = g.mse(fused, tv)?;
            let main = g.constant(prep.stack(|v, m| &v.inputs[m].grid)?);
            let embed = g.constant(embed_batch(&prep.main_deltas()));
            let draw = NoiseDraw::sample(rng, &model.schedule, targets.shape());
            let b_ref = &b;
            let mut injector = |g: &mut Graph<'_, T>, x_t: Var, steps: &[usize]| {
                model.injection.compute_residuals(g, b_ref, fused, x_t, steps, embed)
            };
            let diff = diffusion_loss(
                &model.backbone,
                &mut g,
                &b,
                &model.schedule,
                &targets,
                main,
                embed,
                &draw,
                Some(&mut injector),
            )?;
            let a = g.scale(diff, T::c(cfg.w_diff))?;
            let c = g.scale(mse, T::c(cfg.w_mse))?;
            let l = g.add(a, c)?;
            (l, Some(diff), Some(mse))
        }
    };
    let value = |v: Var| -> Result<f64> { Ok(g.value(v).item()?.as_f64()) };
    let out = (value(loss)?, diffusion.map(value).transpose()?, mse.map(value).transpose()?);
    let grads = grad(&g, loss, params, &b)?;
    Ok((out.0, out.1, out.2, grads))
}

/// Mean held-out diffusion loss for a fixed set of draws. `inject` adds the
/// residual branch; without it the denoiser runs alone.
pub fn held_out_diffusion_loss<T: Real>(
    model: &Model,
    params: &ParamSet<T>,
    objects: &[SyntheticObject],
    seed: u64,
    inject: bool,
) -> Result<f64> {
    let n = model.cfg.latent_size;
    let mut total = 0.0;
    for (i, obj) in objects.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let v = sample_training_views::<T, _>(obj, &mut rng, n, model.fov())?;
        let poses: Vec<CameraPose> = v.inputs.iter().map(|x| x.pose).collect();
        let m = closest_view(&poses, &v.target.pose).ok_or(Error::Empty("views"))?;
        let x0 = Tensor::stack(&[&v.target.grid])?;
        let draw = NoiseDraw::sample(&mut rng, &model.schedule, x0.shape());
        let mut g = Graph::new();
        let b = g.bind_frozen(params);
        let main = g.constant(Tensor::stack(&[&v.inputs[m].grid])?);
        let embed = g.constant(embed_batch(&[view_delta(&poses[m], &v.target.pose)]));
        let loss = if inject {
            let fused = model.fused_graph(&mut g, &b, &[(&v.inputs[..], v.target.pose)], Sampling::Midpoint)?;
            let b_ref = &b;
            let mut injector = |g: &mut Graph<'_, T>, x_t: Var, steps: &[usize]| {
                model.injection.compute_residuals(g, b_ref, fused, x_t, steps, embed)
            };
            diffusion_loss(&model.backbone, &mut g, &b, &model.schedule, &x0, main, embed, &draw, Some(&mut injector))?
        } else {
            diffusion_loss(&model.backbone, &mut g, &b, &model.schedule, &x0, main, embed, &draw, None)?
        };
        total += g.value(loss).item()?.as_f64();
    }
    Ok(total / objects.len().max(1) as f64)
}

/// Which sampler configuration an evaluation row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalCondition {
    /// Frozen denoiser conditioned on the 0 degree view only.
    Baseline,
    /// Full model with this many input views.
    Views(usize),
}

impl EvalCondition {
    pub fn label(&self) -> String {
        match self {
            EvalCondition::Baseline => String::from("baseline"),
            EvalCondition::Views(n) => format!("views{n}"),
        }
    }
}

/// Scores of one object under one condition, averaged over its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub object: usize,
    pub seed: u64,
    pub condition: EvalCondition,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub condition: EvalCondition,
    pub objects: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<EvalSummary>,
}

impl EvalReport {
    pub fn mean_psnr(&self, condition: EvalCondition) -> Option<f64> {
        self.summary.iter().find(|s| s.condition == condition).map(|s| s.psnr)
    }

    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let summary = Self::summarize(&rows);
        EvalReport { rows, summary }
    }

    fn summarize(rows: &[EvalRow]) -> Vec<EvalSummary> {
        let mut conditions: Vec<EvalCondition> = rows.iter().map(|r| r.condition).collect();
        conditions.sort();
        conditions.dedup();
        conditions
            .into_iter()
            .map(|c| {
                let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.condition == c).collect();
                let k = sel.len() as f64;
                EvalSummary {
                    condition: c,
                    objects: sel.len(),
                    psnr: sel.iter().map(|r| r.psnr).sum::<f64>() / k,
                    ssim: sel.iter().map(|r| r.ssim).sum::<f64>() / k,
                    mse: sel.iter().map(|r| r.mse).sum::<f64>() / k,
                }
            })
            .collect()
    }
}

fn score<T: Real>(samples: &Tensor<T>, targets: &[LatentImage<T>]) -> Result<(f64, f64, f64)> {
    let (mut p, mut s, mut m) = (0.0, 0.0, 0.0);
    for (i, t) in targets.iter().enumerate() {
        let x = samples.index0(i)?;
        p += metrics::psnr(&x, &t.grid)?;
        s += metrics::ssim(&x, &t.grid)?;
        m += metrics::mse(&x, &t.grid)?;
    }
    let k = targets.len() as f64;
    Ok((p / k, s / k, m / k))
}

/// Conditions evaluated for every object: the baseline, then each count.
pub fn eval_conditions(view_counts: &[usize]) -> Vec<EvalCondition> {
    let mut out = vec![EvalCondition::Baseline];
    out.extend(view_counts.iter().map(|&k| EvalCondition::Views(k)));
    out
}

/// Rows of object number `index` under every condition. All conditions
/// share the same noise stream, so differences come from conditioning
/// alone.
pub fn evaluate_object<T: Real>(
    model: &Model,
    params: &ParamSet<T>,
    index: usize,
    obj: &SyntheticObject,
    view_counts: &[usize],
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let n = model.cfg.latent_size;
    let mut rows = Vec::new();
    for cond in eval_conditions(view_counts) {
        let (count, mode) = match cond {
            EvalCondition::Baseline => (1, Conditioning::Backbone),
            EvalCondition::Views(k) => (k, Conditioning::MultiView),
        };
        let ev = eval_views::<T>(obj, count, n, model.fov())?;
        let requests: Vec<SampleRequest<'_, T>> =
            ev.targets.views.iter().map(|t| SampleRequest { views: &ev.inputs.views, target: t.pose }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let samples = model.sample(params, &requests, mode, &mut rng, None)?;
        let (psnr, ssim, mse) = score(&samples, &ev.targets.views)?;
        rows.push(EvalRow { object: index, seed: obj.seed, condition: cond, psnr, ssim, mse });
    }
    Ok(rows)
}

/// Sequential [`evaluate_object`] over `objects`, in order.
pub fn evaluate<T: Real>(
    model: &Model,
    params: &ParamSet<T>,
    objects: &[SyntheticObject],
    view_counts: &[usize],
    seed: u64,
    on_row: &mut dyn FnMut(&EvalRow),
) -> Result<EvalReport> {
    if objects.is_empty() {
        return Err(Error::Empty("evaluation objects"));
    }
    let mut rows = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        for row in evaluate_object(model, params, i, obj, view_counts, seed)? {
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(EvalReport::from_rows(rows))
}

/// Held-out reconstruction error of the fused latent alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    /// `(view count, mean MSE)` over objects and targets.
    pub by_views: Vec<(usize, f64)>,
    /// MSE of predicting the all-zero latent.
    pub zero: f64,
}

impl ReconstructionReport {
    pub fn mse(&self, views: usize) -> Option<f64> {
        self.by_views.iter().find(|(n, _)| *n == views).map(|(_, m)| *m)
    }
}

pub fn evaluate_reconstruction<T: Real>(
    model: &Model,
    params: &ParamSet<T>,
    objects: &[SyntheticObject],
    view_counts: &[usize],
) -> Result<ReconstructionReport> {
    if objects.is_empty() {
        return Err(Error::Empty("evaluation objects"));
    }
    let n = model.cfg.latent_size;
    let mut by_views = Vec::new();
    let mut zero = 0.0;
    let mut zero_count = 0usize;
    for &k in view_counts {
        let (mut total, mut count) = (0.0, 0usize);
        for obj in objects {
            let ev = eval_views::<T>(obj, k, n, model.fov())?;
            for t in &ev.targets.views {
                let f = model.fuse(params, &ev.inputs.views, &t.pose)?;
                total += metrics::mse(&f.grid, &t.grid)?;
                count += 1;
                if by_views.is_empty() {
                    zero += metrics::mse(&Tensor::zeros(t.grid.shape()), &t.grid)?;
                    zero_count += 1;
                }
            }
        }
        by_views.push((k, total / count as f64));
    }
    Ok(ReconstructionReport { by_views, zero: zero / zero_count.max(1) as f64 })
}
