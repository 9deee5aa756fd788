//! Command-line front end: `gen-data`, `train`, `sample` and `eval`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvf_core::camera::CameraPose;
use tvf_core::pipeline::{
    self, evaluate_object, init_stage_params, train_stage, Conditioning, EvalReport, LossRecord, Model, SampleRequest,
    Stage, TrainState, BACKBONE, FUSE, INJECT, LIFT,
};
use tvf_core::synthetic::{gen_object, render_latent, SyntheticObject, VIEW_RADIUS};
use tvf_core::{ParamSet, Tensor};

use crate::archive::Archive;
use crate::config::{parse_list, RunConfig};
use crate::dataset::{self, GenOptions};
use crate::error::{CliError, CliResult};
use crate::parallel::{map_ordered, threads_from_env};
use crate::{pgm, report};

#[derive(Debug, Parser)]
#[command(name = "tvf", version, about = "Multi-view tri-plane fusion for a small latent denoiser")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Debug logging, including per-step sampler diagnostics.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate procedural objects and their ring-view latents.
    GenData(GenDataArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Sample a target latent for one object.
    Sample(SampleArgs),
    /// Evaluate the view-count sweep against the baseline.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub eval_objects: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub stage: u8,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory; earlier stages are read from here too.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many total steps (the run can be resumed).
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Continue from the stage's saved checkpoint and optimizer state.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleMode {
    Multiview,
    Backbone,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint directory holding stage0.ckpt (and stage2.ckpt).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input azimuths in degrees, comma separated.
    #[arg(long)]
    pub views: String,
    /// Target azimuth, optionally `azimuth,elevation`, in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub target: String,
    /// Dataset to take the object from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Index into the held-out split of `--data`.
    #[arg(long, default_value_t = 0)]
    pub object: usize,
    /// Generate the object from this seed instead of reading a dataset.
    #[arg(long)]
    pub object_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SampleMode::Multiview)]
    pub mode: SampleMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one PGM preview per latent channel.
    #[arg(long)]
    pub pgm: bool,
    /// Also store the fused latent the injection branch consumed.
    #[arg(long)]
    pub dump_fused: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub view_counts: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate only the first N held-out objects.
    #[arg(long)]
    pub objects: Option<usize>,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub const CKPT_KIND: &str = "params";
pub const STATE_KIND: &str = "optimizer";
pub const LATENT_KIND: &str = "latent";

pub fn ckpt_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("stage{}.ckpt", stage.index()))
}

fn state_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("stage{}.state", stage.index()))
}

pub fn loss_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("stage{}_loss.csv", stage.index()))
}

fn stage_prefixes(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Backbone => &[BACKBONE],
        Stage::Lifting => &[LIFT, FUSE],
        Stage::Joint => &[LIFT, FUSE, INJECT],
    }
}

fn select(ps: &ParamSet<f32>, prefixes: &[&str]) -> CliResult<ParamSet<f32>> {
    let mut out = ParamSet::new();
    for p in prefixes {
        out.merge(ps.subset(p))?;
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, S>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return std::process::ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.to_exit()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = threads_from_env()?;
    match &cli.command {
        Command::GenData(a) => gen_data(&mut cfg, a, threads),
        Command::Train(a) => train(&mut cfg, a, threads),
        Command::Sample(a) => sample(&mut cfg, a, cli.verbose),
        Command::Eval(a) => eval(&mut cfg, a, threads),
    }
}

fn set_opt<V: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<V>) -> CliResult<()> {
    if let Some(v) = v {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn gen_data(cfg: &mut RunConfig, a: &GenDataArgs, threads: usize) -> CliResult<()> {
    set_opt(cfg, "data.objects", &a.objects)?;
    set_opt(cfg, "data.eval_objects", &a.eval_objects)?;
    set_opt(cfg, "data.views", &a.views)?;
    set_opt(cfg, "data.seed", &a.seed)?;
    cfg.set("paths.data", &a.out.display().to_string())?;
    cfg.validate()?;
    let model = cfg.model_config()?;
    let opts = GenOptions {
        objects: cfg.usize("data.objects")?,
        eval_objects: cfg.usize("data.eval_objects")?,
        views: cfg.usize("data.views")?,
        seed: cfg.u64("data.seed")?,
        grid: model.latent_size,
        fov_deg: model.fusion.fov_deg,
    };
    let t0 = Instant::now();
    let m = dataset::generate(&opts, &a.out, threads)?;
    log::info!(
        "wrote {} training and {} held-out objects ({} views each) to {} in {:.1}s",
        m.train.len(),
        m.eval.len(),
        m.views_per_object,
        a.out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn data_dir(cfg: &RunConfig, arg: &Option<PathBuf>) -> PathBuf {
    arg.clone().unwrap_or_else(|| PathBuf::from(cfg.get("paths.data")))
}

fn out_dir(cfg: &RunConfig, arg: &Option<PathBuf>) -> PathBuf {
    arg.clone().unwrap_or_else(|| PathBuf::from(cfg.get("paths.out")))
}

/// Names, shapes and value bits agree; trainable flags are ignored.
pub fn same_bits(a: &ParamSet<f32>, b: &ParamSet<f32>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((na, pa), (nb, pb))| {
            na == nb
                && pa.tensor.shape() == pb.tensor.shape()
                && pa.tensor.data().iter().zip(pb.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

/// Parameters the stage starts from: earlier checkpoints for stage 2.
fn prior_params(dir: &Path, stage: Stage) -> CliResult<ParamSet<f32>> {
    let mut prior = ParamSet::new();
    if stage == Stage::Joint {
        let b = Archive::read(ckpt_path(dir, Stage::Backbone), "`backbone.` archive from stage 0")?
            .expect_kind(CKPT_KIND)?;
        let l =
            Archive::read(ckpt_path(dir, Stage::Lifting), "`lift.` archive from stage 1")?.expect_kind(CKPT_KIND)?;
        prior.merge(b.params)?;
        prior.merge(l.params)?;
    }
    Ok(prior)
}

/// Check that loaded parameters have exactly the names and shapes the
/// configured model would create.
fn check_against_model(model: &Model, ps: &ParamSet<f32>, prefixes: &[&str]) -> CliResult<()> {
    let mut fresh = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.init_backbone(&mut fresh, &mut rng)?;
    model.init_lifting(&mut fresh, &mut rng)?;
    model.init_injection(&mut fresh, &mut rng)?;
    let want = select(&fresh, prefixes)?;
    let have = select(ps, prefixes)?;
    let shapes =
        |s: &ParamSet<f32>| s.iter().map(|(n, p)| (n.to_string(), p.tensor.shape().to_vec())).collect::<Vec<_>>();
    if shapes(&want) != shapes(&have) {
        return Err(CliError::usage(format!(
            "checkpoint entries under {prefixes:?} do not match the configured model"
        )));
    }
    Ok(())
}

fn encode_state(state: &TrainState<f32>) -> CliResult<Archive> {
    let mut ps = ParamSet::new();
    for (k, v) in &state.optimizer.state.m {
        ps.insert(&format!("m/{k}"), v.clone(), false)?;
    }
    for (k, v) in &state.optimizer.state.v {
        ps.insert(&format!("v/{k}"), v.clone(), false)?;
    }
    Ok(Archive::new(STATE_KIND, ps)
        .with_meta("step", state.step as u64)
        .with_meta("adam_step", state.optimizer.state.step))
}

fn decode_state(a: Archive, state: &mut TrainState<f32>) -> CliResult<()> {
    let meta = |k: &str| {
        a.meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| CliError::usage(format!("optimizer state lacks {k}")))
    };
    state.step = meta("step")? as usize;
    state.optimizer.state.step = meta("adam_step")?;
    for (name, p) in a.params.iter() {
        let (kind, key) = name.split_once('/').ok_or_else(|| CliError::usage(format!("bad optimizer entry {name}")))?;
        let map = match kind {
            "m" => &mut state.optimizer.state.m,
            "v" => &mut state.optimizer.state.v,
            _ => return Err(CliError::usage(format!("bad optimizer entry {name}"))),
        };
        map.insert(key.to_string(), p.tensor.clone());
    }
    Ok(())
}

const LOSS_HEADER: &str = "step,epoch,loss,diffusion,mse\n";

fn loss_line(r: &LossRecord) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!("{},{},{},{},{}\n", r.step, r.epoch, r.loss, opt(r.diffusion), opt(r.mse))
}

/// Loss CSV lines for steps before `step`, kept when resuming.
fn kept_loss_lines(path: &Path, step: usize) -> CliResult<String> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = String::new();
    for line in text.lines().skip(1) {
        let s: usize = line
            .split(',')
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| CliError::usage(format!("malformed loss line {line:?} in {}", path.display())))?;
        if s < step {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn train(cfg: &mut RunConfig, a: &TrainArgs, threads: usize) -> CliResult<()> {
    let stage = Stage::from_index(a.stage).map_err(|e| CliError::usage(e.to_string()))?;
    set_opt(cfg, "seed", &a.seed)?;
    set_opt(cfg, &format!("stage{}.epochs", a.stage), &a.epochs)?;
    let data = data_dir(cfg, &a.data);
    let out = out_dir(cfg, &a.out);
    cfg.set("paths.data", &data.display().to_string())?;
    cfg.set("paths.out", &out.display().to_string())?;
    cfg.validate()?;
    let model = Model::new(cfg.model_config()?)?;
    let scfg = cfg.stage_config(stage)?;
    let prior = prior_params(&out, stage)?;
    let ds = dataset::load(&data, threads)?;
    if ds.train.is_empty() {
        return Err(CliError::usage("dataset has no training objects"));
    }
    ensure_dir(&out)?;
    let backbone_before = select(&prior, &[BACKBONE])?;

    let mut state;
    let mut losses = String::from(LOSS_HEADER);
    if a.resume {
        let ck = Archive::read(ckpt_path(&out, stage), "checkpoint to resume")?.expect_kind(CKPT_KIND)?;
        let mut params = prior;
        params.merge(ck.params)?;
        state = TrainState::new(params, &scfg);
        decode_state(
            Archive::read(state_path(&out, stage), "optimizer state to resume")?.expect_kind(STATE_KIND)?,
            &mut state,
        )?;
        losses.push_str(&kept_loss_lines(&loss_path(&out, stage), state.step)?);
    } else {
        state = TrainState::new(init_stage_params(&model, &scfg, prior)?, &scfg);
    }
    check_against_model(&model, &state.params, stage_prefixes(stage))?;

    let total = scfg.total_steps(ds.train.len());
    let until = a.max_steps.unwrap_or(total).min(total);
    log::info!(
        "stage {}: steps {}..{} of {total} on {} objects (config {})",
        a.stage,
        state.step,
        until,
        ds.train.len(),
        &cfg.hash()[..12]
    );
    let t0 = Instant::now();
    let mut window = Vec::new();
    train_stage(&model, &scfg, &ds.train, &mut state, until, &mut |r| {
        losses.push_str(&loss_line(r));
        window.push(r.loss);
        if window.len() == 50 || r.step + 1 == until {
            log::info!(
                "step {:>6} epoch {:>3} loss {:.5} ({:.0}s)",
                r.step + 1,
                r.epoch,
                window.iter().sum::<f64>() / window.len() as f64,
                t0.elapsed().as_secs_f64()
            );
            window.clear();
        }
    })?;

    if stage == Stage::Joint && !same_bits(&backbone_before, &select(&state.params, &[BACKBONE])?) {
        return Err(CliError::usage("frozen backbone changed during stage 2"));
    }
    let hash = cfg.hash();
    Archive::new(CKPT_KIND, select(&state.params, stage_prefixes(stage))?)
        .with_meta("stage", a.stage as u64)
        .with_meta("step", state.step as u64)
        .with_meta("config_hash", hash.clone())
        .write(ckpt_path(&out, stage))?;
    encode_state(&state)?.write(state_path(&out, stage))?;
    write_text(&loss_path(&out, stage), &losses)?;
    write_text(&out.join(format!("stage{}.config", a.stage)), &cfg.resolved())?;
    log::info!("stage {} done at step {} in {:.1}s", a.stage, state.step, t0.elapsed().as_secs_f64());
    Ok(())
}

/// Load every parameter group sampling or evaluation needs.
fn load_for_inference(model: &Model, dir: &Path, multiview: bool) -> CliResult<ParamSet<f32>> {
    let mut ps = Archive::read(ckpt_path(dir, Stage::Backbone), "`backbone.` archive from stage 0")?
        .expect_kind(CKPT_KIND)?
        .params;
    let mut groups = vec![BACKBONE];
    if multiview {
        let j = Archive::read(ckpt_path(dir, Stage::Joint), "`lift.`/`inject.` archive from stage 2")?
            .expect_kind(CKPT_KIND)?;
        ps.merge(j.params)?;
        groups.extend([LIFT, FUSE, INJECT]);
    }
    check_against_model(model, &ps, &groups)?;
    ps.set_all_trainable(false);
    Ok(ps)
}

fn parse_target(s: &str) -> CliResult<CameraPose> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |x: &str| {
        x.parse::<f64>().map_err(|_| CliError::usage(format!("bad target {s:?}: expected AZ or AZ,EL in degrees")))
    };
    let (az, el) = match parts.as_slice() {
        [az] => (num(az)?, 0.0),
        [az, el] => (num(az)?, num(el)?),
        _ => return Err(CliError::usage(format!("bad target {s:?}: expected AZ or AZ,EL in degrees"))),
    };
    if !(az.is_finite() && el.is_finite()) || el.abs() >= 90.0 {
        return Err(CliError::usage(format!("bad target {s:?}: elevation must be inside (-90, 90)")));
    }
    Ok(CameraPose::from_degrees(az, el, VIEW_RADIUS)?)
}

fn parse_views(s: &str) -> CliResult<Vec<CameraPose>> {
    let out: Vec<CameraPose> = s
        .split(',')
        .map(|x| {
            let az: f64 = x.trim().parse().map_err(|_| CliError::usage(format!("bad view azimuth {x:?} in {s:?}")))?;
            if !az.is_finite() {
                return Err(CliError::usage(format!("bad view azimuth {x:?}")));
            }
            Ok(CameraPose::from_degrees(az, 0.0, VIEW_RADIUS)?)
        })
        .collect::<CliResult<_>>()?;
    if out.is_empty() {
        return Err(CliError::usage("--views needs at least one azimuth"));
    }
    Ok(out)
}

fn sample_object(a: &SampleArgs) -> CliResult<SyntheticObject> {
    match (a.object_seed, &a.data) {
        (Some(s), _) => Ok(gen_object(s)),
        (None, Some(dir)) => {
            let ds = dataset::load(dir, 1)?;
            ds.eval.get(a.object).cloned().ok_or_else(|| {
                CliError::usage(format!("held-out object {} out of range ({})", a.object, ds.eval.len()))
            })
        }
        (None, None) => Err(CliError::usage("sample needs --object-seed or --data")),
    }
}

fn sample(cfg: &mut RunConfig, a: &SampleArgs, verbose: bool) -> CliResult<()> {
    set_opt(cfg, "seed", &a.seed)?;
    cfg.validate()?;
    let poses = parse_views(&a.views)?;
    let target = parse_target(&a.target)?;
    let model = Model::new(cfg.model_config()?)?;
    let multiview = a.mode == SampleMode::Multiview;
    let dir = out_dir(cfg, &a.ckpt);
    let ps = load_for_inference(&model, &dir, multiview)?;
    let obj = sample_object(a)?;
    let n = model.cfg.latent_size;
    let fov = model.cfg.fusion.fov_deg;
    let views = poses.iter().map(|p| render_latent::<f32>(&obj, p, n, fov)).collect::<tvf_core::Result<Vec<_>>>()?;
    let truth = render_latent::<f32>(&obj, &target, n, fov)?;
    let mode = if multiview { Conditioning::MultiView } else { Conditioning::Backbone };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.u64("seed")?);
    let mut hook = |t: usize, x: &Tensor<f32>| {
        log::debug!("t={t:>4} rms={:.5} max|x|={:.5}", x.l2_norm() / (x.numel() as f64).sqrt(), x.max_abs());
    };
    let hook_ref: Option<&mut tvf_core::diffusion::StepHook<'_, f32>> = if verbose { Some(&mut hook) } else { None };
    let req = [SampleRequest { views: &views, target }];
    let out = model.sample(&ps, &req, mode, &mut rng, hook_ref)?;
    let grid = out.index0(0)?;

    let mut dump = ParamSet::new();
    dump.insert("sample", grid.clone(), false)?;
    dump.insert("truth", truth.grid.clone(), false)?;
    let fused = if a.dump_fused && multiview { Some(model.fuse(&ps, &views, &target)?) } else { None };
    if let Some(f) = &fused {
        dump.insert("fused", f.grid.clone(), false)?;
    }
    ensure_dir(&a.out)?;
    let psnr = tvf_core::metrics::psnr(&grid, &truth.grid)?;
    Archive::new(LATENT_KIND, dump)
        .with_meta("views_deg", poses.iter().map(|p| p.theta_deg()).collect::<Vec<_>>())
        .with_meta("target_deg", vec![target.theta_deg(), target.phi_deg()])
        .with_meta("object_seed", obj.seed)
        .with_meta("seed", cfg.u64("seed")?)
        .with_meta("mode", if multiview { "multiview" } else { "backbone" })
        .with_meta("config_hash", cfg.hash())
        .write(a.out.join("sample.lat"))?;
    if a.pgm {
        pgm::write_channels(&a.out, "sample", &grid)?;
        pgm::write_channels(&a.out, "truth", &truth.grid)?;
        if let Some(f) = &fused {
            pgm::write_channels(&a.out, "fused", &f.grid)?;
        }
    }
    log::info!("sampled target {} from {} view(s); PSNR vs truth {psnr:.2} dB", a.target, views.len());
    Ok(())
}

fn eval(cfg: &mut RunConfig, a: &EvalArgs, threads: usize) -> CliResult<()> {
    set_opt(cfg, "seed", &a.seed)?;
    set_opt(cfg, "eval.view_counts", &a.view_counts)?;
    set_opt(cfg, "eval.objects", &a.objects)?;
    cfg.validate()?;
    let counts = parse_list(cfg.get("eval.view_counts")).map_err(CliError::usage)?;
    let model = Model::new(cfg.model_config()?)?;
    let ps = load_for_inference(&model, &out_dir(cfg, &a.ckpt), true)?;
    let ds = dataset::load(&data_dir(cfg, &a.data), threads)?;
    let limit = match cfg.usize("eval.objects")? {
        0 => ds.eval.len(),
        k => k.min(ds.eval.len()),
    };
    if limit == 0 {
        return Err(CliError::usage("evaluation set is empty"));
    }
    let seed = cfg.u64("seed")?;
    let t0 = Instant::now();
    let jobs: Vec<(usize, &SyntheticObject)> = ds.eval[..limit].iter().enumerate().collect();
    let rows = map_ordered(&jobs, threads, |&(i, obj)| {
        let rows = evaluate_object(&model, &ps, i, obj, &counts, seed)?;
        for r in &rows {
            log::info!("object {:>3} {:<9} psnr {:.3} ssim {:.4}", r.object, r.condition.label(), r.psnr, r.ssim);
        }
        Ok(rows)
    })?;
    let report = EvalReport::from_rows(rows.into_iter().flatten().collect());
    let hash = cfg.hash();
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_text(&a.out, &report::eval_csv(&report, &hash))?;
    let gating = gating_sweep(&model, &ps, &ds.eval[0], seed)?;
    write_text(&a.out.with_extension("gating.csv"), &report::gating_csv(&gating))?;
    for s in &report.summary {
        log::info!(
            "{:<9} mean psnr {:.3} ssim {:.4} mse {:.5} over {} objects",
            s.condition.label(),
            s.psnr,
            s.ssim,
            s.mse,
            s.objects
        );
    }
    log::info!("evaluation took {:.1}s (config {})", t0.elapsed().as_secs_f64(), &hash[..12]);
    Ok(())
}

/// Residual magnitude against main-to-target azimuth delta for the first
/// held-out object, its 0 degree view and a mid-chain noisy latent.
fn gating_sweep(model: &Model, ps: &ParamSet<f32>, obj: &SyntheticObject, seed: u64) -> CliResult<Vec<(f64, f64)>> {
    let n = model.cfg.latent_size;
    let fov = model.cfg.fusion.fov_deg;
    let front = render_latent::<f32>(obj, &CameraPose::from_degrees(0.0, 0.0, VIEW_RADIUS)?, n, fov)?;
    let target = CameraPose::from_degrees(90.0, 0.0, VIEW_RADIUS)?;
    let f_t = Tensor::stack(&[&model.fuse(ps, std::slice::from_ref(&front), &target)?.grid])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_t = tvf_core::diffusion::randn::<f32, _>(&mut rng, f_t.shape());
    let t = model.schedule.steps().div_ceil(2);
    Ok(model.injection.gating_probe(ps, &f_t, &x_t, t, &pipeline::GATING_SWEEP_DEG)?)
}
