//! Flat `key = value` run configuration. `#` starts a comment; blank lines
//! are ignored; unknown keys are an error. Every key has a default, and the
//! resolved configuration (all keys, sorted) is what gets hashed and echoed
//! beside outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use tvf_core::diffusion::BackboneConfig;
use tvf_core::fusion::FusionConfig;
use tvf_core::lifting::LiftConfig;
use tvf_core::pipeline::{ModelConfig, Stage, StageConfig};

use crate::error::{CliError, CliResult};

/// Every key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for training, sampling and evaluation"),
    ("data.objects", "200", "training objects"),
    ("data.eval_objects", "20", "held-out objects"),
    ("data.views", "12", "ring views stored per object"),
    ("data.seed", "0", "seed the object seeds are drawn from"),
    ("paths.data", "data", "dataset directory"),
    ("paths.out", "runs", "checkpoint directory"),
    ("model.latent_size", "16", "latent grid side; also the tri-plane resolution"),
    ("model.plane_channels", "8", "channels per plane, density first"),
    ("model.lift_dim", "32", "lifting network width"),
    ("model.extent", "1.75", "half-width of the cube each tri-plane spans"),
    ("model.groups", "8", "group-norm groups"),
    ("model.ctx_tokens", "4", "context tokens per delta embedding"),
    ("model.ctx_dim", "32", "context token width"),
    ("backbone.c0", "32", "denoiser channels at full resolution"),
    ("backbone.c1", "64", "denoiser channels at half resolution"),
    ("backbone.temb", "128", "time embedding width"),
    ("diffusion.steps", "100", "diffusion steps T"),
    ("fusion.samples", "32", "samples per target ray"),
    ("fusion.fov_deg", "50", "field of view of every camera"),
    ("fusion.decode_before_aggregate", "false", "decode density per view before blending"),
    ("fusion.uniform_weights", "false", "ablation: equal view weights"),
    ("inject.use_xt", "true", "feed the noisy latent to the injection branch"),
    ("stage0.epochs", "10", ""),
    ("stage0.batch_size", "8", ""),
    ("stage0.repeats", "8", "training quadruples per object per epoch"),
    ("stage0.lr", "0.001", ""),
    ("stage0.clip_norm", "1", "global gradient-norm clip; 0 disables"),
    ("stage1.epochs", "10", ""),
    ("stage1.batch_size", "8", ""),
    ("stage1.repeats", "4", ""),
    ("stage1.lr", "0.001", ""),
    ("stage1.clip_norm", "1", ""),
    ("stage2.epochs", "10", ""),
    ("stage2.batch_size", "8", ""),
    ("stage2.repeats", "2", ""),
    ("stage2.lr", "0.0002", ""),
    ("stage2.clip_norm", "1", ""),
    ("stage2.w_diff", "1", "weight of the diffusion loss"),
    ("stage2.w_mse", "1", "weight of the reconstruction loss"),
    ("eval.view_counts", "1,2,3,4", "input view counts of the sweep"),
    ("eval.objects", "0", "held-out objects to evaluate; 0 means all"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    /// Defaults overridden by `text`.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| CliError::usage(format!("config line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::usage(format!("unknown config key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str) -> CliResult<V> {
        let raw = self.get(key);
        raw.parse().map_err(|_| CliError::usage(format!("config key {key}: cannot parse {raw:?}")))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        let v: f64 = self.parsed(key)?;
        if !v.is_finite() {
            return Err(CliError::usage(format!("config key {key}: {v} is not finite")));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        self.parsed(key)
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        parse_list(self.get(key)).map_err(|e| CliError::usage(format!("config key {key}: {e}")))
    }

    /// Check that every value parses and builds a valid model.
    pub fn validate(&self) -> CliResult<()> {
        let invalid = |e: tvf_core::Error| CliError::usage(format!("invalid configuration: {e}"));
        tvf_core::pipeline::Model::new(self.model_config()?).map_err(invalid)?;
        for s in [Stage::Backbone, Stage::Lifting, Stage::Joint] {
            self.stage_config(s)?.validate().map_err(invalid)?;
        }
        for k in ["data.objects", "data.eval_objects", "data.views", "eval.objects"] {
            self.usize(k)?;
        }
        self.u64("data.seed")?;
        let counts = self.usize_list("eval.view_counts")?;
        if counts.is_empty() || counts.iter().any(|&n| !(1..=4).contains(&n)) {
            return Err(CliError::usage("eval.view_counts must list values in 1..=4"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let groups = self.usize("model.groups")?;
        let fusion = FusionConfig {
            samples_per_ray: self.usize("fusion.samples")?,
            fov_deg: self.f64("fusion.fov_deg")?,
            decode_before_aggregate: self.bool("fusion.decode_before_aggregate")?,
            uniform_weights: self.bool("fusion.uniform_weights")?,
        };
        if fusion.samples_per_ray == 0 || !(fusion.fov_deg > 0.0 && fusion.fov_deg < 120.0) {
            return Err(CliError::usage("fusion.samples must be positive and fusion.fov_deg inside (0, 120)"));
        }
        let extent = self.f64("model.extent")?;
        if extent <= 0.0 {
            return Err(CliError::usage("model.extent must be positive"));
        }
        Ok(ModelConfig {
            latent_size: self.usize("model.latent_size")?,
            backbone: BackboneConfig {
                c0: self.usize("backbone.c0")?,
                c1: self.usize("backbone.c1")?,
                temb: self.usize("backbone.temb")?,
                groups,
                ctx_tokens: self.usize("model.ctx_tokens")?,
                ctx_dim: self.usize("model.ctx_dim")?,
            },
            lift: LiftConfig {
                dim: self.usize("model.lift_dim")?,
                groups,
                ctx_tokens: self.usize("model.ctx_tokens")?,
                ctx_dim: self.usize("model.ctx_dim")?,
                plane_channels: self.usize("model.plane_channels")?,
                extent,
            },
            fusion,
            diffusion_steps: self.usize("diffusion.steps")?,
            use_xt: self.bool("inject.use_xt")?,
        })
    }

    pub fn stage_config(&self, stage: Stage) -> CliResult<StageConfig> {
        let p = format!("stage{}", stage.index());
        let clip = self.f64(&format!("{p}.clip_norm"))?;
        let mut cfg = StageConfig::defaults(stage);
        cfg.epochs = self.usize(&format!("{p}.epochs"))?;
        cfg.batch_size = self.usize(&format!("{p}.batch_size"))?;
        cfg.repeats = self.usize(&format!("{p}.repeats"))?;
        cfg.lr = self.f64(&format!("{p}.lr"))?;
        cfg.clip_norm = (clip > 0.0).then_some(clip);
        cfg.seed = self.u64("seed")?;
        if stage == Stage::Joint {
            cfg.w_diff = self.f64("stage2.w_diff")?;
            cfg.w_mse = self.f64("stage2.w_mse")?;
        }
        Ok(cfg)
    }

    /// Every key, sorted, one `key = value` per line.
    pub fn resolved(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the resolved lines, leaving out the `paths.` keys so
    /// the same run in another directory hashes the same.
    pub fn hash(&self) -> String {
        let text: String =
            self.values.iter().filter(|(k, _)| !k.starts_with("paths.")).map(|(k, v)| format!("{k} = {v}\n")).collect();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Comma-separated unsigned integers.
pub fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("{x:?} is not a non-negative integer")))
        .collect()
}
