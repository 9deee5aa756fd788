//! A small latent DDPM: noise schedule, a two-level UNet that predicts the
//! added noise from `x_t`, the main-view latent and a view-delta context,
//! and ancestral sampling.
//!
//! The encoder is a standalone piece so the injection branch can clone it.
//! The decoder accepts one additive residual per encoder junction: the six
//! skip tensors followed by the middle block output.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lifting::LATENT_CHANNELS;
use crate::nn::{Attention, ContextEmbed, Conv, GroupNorm, ResBlock, TimeEmbed, Upsample};
use crate::real::Real;
use crate::tensor::{Bindings, Graph, ParamSet, Tensor, Var};

/// Linear beta schedule. The reference range `1e-4 .. 0.02` is defined for
/// 1000 steps; shorter schedules scale betas by `1000 / T` so the chain
/// still ends near pure noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("noise schedule needs at least one step".into()));
        }
        let scale = 1000.0 / steps as f64;
        let (lo, hi) = (1e-4 * scale, 0.02 * scale);
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                (lo + f * (hi - lo)).min(0.999)
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep { t, max: self.steps() });
        }
        Ok(())
    }

    /// `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Variance of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    /// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    pub fn q_sample<T: Real>(&self, x0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(t)?;
        if x0.shape() != eps.shape() {
            return Err(Error::shape("q_sample", x0.shape(), eps.shape()));
        }
        let ab = self.alpha_bar(t);
        let (a, s) = (T::c(ab.sqrt()), T::c((1.0 - ab).sqrt()));
        let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + s * e).collect();
        Tensor::new(x0.shape(), data)
    }

    /// Batched [`q_sample`](Self::q_sample) with one step per leading item.
    pub fn q_sample_batch<T: Real>(&self, x0: &Tensor<T>, ts: &[usize], eps: &Tensor<T>) -> Result<Tensor<T>> {
        if x0.shape() != eps.shape() || x0.shape().first() != Some(&ts.len()) {
            return Err(Error::shape("q_sample", x0.shape(), eps.shape()));
        }
        let per = x0.numel() / ts.len().max(1);
        let mut out = Vec::with_capacity(x0.numel());
        for (i, &t) in ts.iter().enumerate() {
            self.check(t)?;
            let ab = self.alpha_bar(t);
            let (a, s) = (T::c(ab.sqrt()), T::c((1.0 - ab).sqrt()));
            let xs = &x0.data()[i * per..(i + 1) * per];
            let es = &eps.data()[i * per..(i + 1) * per];
            out.extend(xs.iter().zip(es).map(|(&x, &e)| a * x + s * e));
        }
        Tensor::new(x0.shape(), out)
    }
}

/// Standard normal tensor.
pub fn randn<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::c(rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub c0: usize,
    pub c1: usize,
    pub temb: usize,
    pub groups: usize,
    pub ctx_tokens: usize,
    pub ctx_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { c0: 32, c1: 64, temb: 128, groups: 8, ctx_tokens: 4, ctx_dim: 32 }
    }
}

impl BackboneConfig {
    /// Channels of the six skips and the middle output, in residual order.
    pub fn junction_channels(&self) -> [usize; 7] {
        let (a, b) = (self.c0, self.c1);
        [a, a, a, a, b, b, b]
    }

    /// `[C, H, W]` of every junction for a square latent of side `size`.
    pub fn junction_shapes(&self, size: usize) -> Vec<[usize; 3]> {
        self.junction_channels()
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = if i < 3 { size } else { size / 2 };
                [c, s, s]
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        for c in [self.c0, self.c1, self.c0 + self.c1, 2 * self.c1] {
            if self.groups == 0 || c % self.groups != 0 {
                return Err(Error::Invalid(format!("{c} channels do not split into {} groups", self.groups)));
            }
        }
        Ok(())
    }
}

/// Encoder outputs the decoder (or a residual branch) consumes.
pub struct EncoderOut {
    /// Six skips followed by the middle output.
    pub junctions: Vec<Var>,
    /// Activated time embedding `[B, temb]`.
    pub temb: Var,
    /// Context tokens `[B, M, ctx_dim]`.
    pub ctx: Var,
}

/// Time/context embeddings, stem, two levels and the middle block.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: BackboneConfig,
    pub prefix: String,
    pub in_channels: usize,
}

impl Encoder {
    pub fn new(cfg: BackboneConfig, prefix: impl Into<String>, in_channels: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Encoder { cfg, prefix: prefix.into(), in_channels })
    }

    fn n(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn stem_name(&self) -> String {
        self.n("conv_in")
    }

    fn temb(&self) -> TimeEmbed {
        TimeEmbed { name: self.n("temb"), base: self.cfg.c0, dim: self.cfg.temb }
    }
    fn ctx(&self) -> ContextEmbed {
        ContextEmbed { name: self.n("ctx"), tokens: self.cfg.ctx_tokens, dim: self.cfg.ctx_dim }
    }
    pub fn stem(&self) -> Conv {
        Conv::new(self.stem_name(), self.in_channels, self.cfg.c0, 3, 1)
    }
    fn l0(&self, i: usize) -> ResBlock {
        let c = &self.cfg;
        ResBlock::new(self.n(&format!("l0.{i}")), c.c0, c.c0, Some(c.temb), c.groups)
    }
    fn down(&self) -> Conv {
        Conv::new(self.n("down"), self.cfg.c0, self.cfg.c0, 3, 2)
    }
    fn l1(&self, i: usize) -> (ResBlock, Attention) {
        let c = &self.cfg;
        let cin = if i == 0 { c.c0 } else { c.c1 };
        (
            ResBlock::new(self.n(&format!("l1.{i}.res")), cin, c.c1, Some(c.temb), c.groups),
            Attention::cross_attention(self.n(&format!("l1.{i}.attn")), c.c1, c.ctx_dim, c.groups),
        )
    }
    fn mid(&self) -> (ResBlock, Attention) {
        let c = &self.cfg;
        (
            ResBlock::new(self.n("mid.res"), c.c1, c.c1, Some(c.temb), c.groups),
            Attention::cross_attention(self.n("mid.attn"), c.c1, c.ctx_dim, c.groups),
        )
    }

    /// Every entry except the stem.
    pub fn init_body<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.temb().init(ps, rng)?;
        self.ctx().init(ps, rng)?;
        for i in 0..2 {
            self.l0(i).init(ps, rng)?;
        }
        self.down().init(ps, rng)?;
        for i in 0..2 {
            let (r, a) = self.l1(i);
            r.init(ps, rng)?;
            a.init(ps, rng)?;
        }
        let (r, a) = self.mid();
        r.init(ps, rng)?;
        a.init(ps, rng)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.stem().init(ps, rng)?;
        self.init_body(ps, rng)
    }

    /// `x [B, in, H, H]`, one timestep per item, `embed [B, 4]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bindings,
        x: Var,
        steps: &[usize],
        embed: Var,
    ) -> Result<EncoderOut> {
        let s = g.shape(x).to_vec();
        if s.len() != 4
            || s[1] != self.in_channels
            || s[2] != s[3]
            || s[2] < 2
            || !s[2].is_multiple_of(2)
            || s[0] != steps.len()
        {
            return Err(Error::shape("encoder", &s, &[steps.len(), self.in_channels]));
        }
        if g.shape(embed) != [s[0], 4] {
            return Err(Error::shape("encoder embed", g.shape(embed), &[s[0], 4]));
        }
        let temb = self.temb().forward(g, b, steps)?;
        let ctx = self.ctx().forward(g, b, embed)?;
        let mut junctions = Vec::with_capacity(7);
        let mut h = self.stem().forward(g, b, x)?;
        junctions.push(h);
        for i in 0..2 {
            h = self.l0(i).forward(g, b, h, Some(temb))?;
            junctions.push(h);
        }
        h = self.down().forward(g, b, h)?;
        junctions.push(h);
        for i in 0..2 {
            let (r, a) = self.l1(i);
            h = r.forward(g, b, h, Some(temb))?;
            h = a.forward(g, b, h, Some(ctx))?;
            junctions.push(h);
        }
        let (r, a) = self.mid();
        h = r.forward(g, b, h, Some(temb))?;
        h = a.forward(g, b, h, Some(ctx))?;
        junctions.push(h);
        Ok(EncoderOut { junctions, temb, ctx })
    }
}

/// The denoiser: `backbone.enc.*` plus `backbone.dec.*`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub encoder: Encoder,
}

impl Backbone {
    pub const PREFIX: &'static str = "backbone";
    pub const ENCODER_PREFIX: &'static str = "backbone.enc";

    pub fn new(cfg: BackboneConfig) -> Result<Self> {
        let encoder = Encoder::new(cfg.clone(), Self::ENCODER_PREFIX, 2 * LATENT_CHANNELS)?;
        Ok(Backbone { cfg, encoder })
    }

    fn dec_l1(&self, i: usize) -> (ResBlock, Attention) {
        let c = &self.cfg;
        let skip = if i == 2 { c.c0 } else { c.c1 };
        (
            ResBlock::new(format!("backbone.dec.l1.{i}.res"), c.c1 + skip, c.c1, Some(c.temb), c.groups),
            Attention::cross_attention(format!("backbone.dec.l1.{i}.attn"), c.c1, c.ctx_dim, c.groups),
        )
    }
    fn dec_up(&self) -> Upsample {
        Upsample { name: "backbone.dec.up".into(), cin: self.cfg.c1, cout: self.cfg.c1 }
    }
    fn dec_l0(&self, i: usize) -> ResBlock {
        let c = &self.cfg;
        let cin = if i == 0 { c.c1 + c.c0 } else { 2 * c.c0 };
        ResBlock::new(format!("backbone.dec.l0.{i}"), cin, c.c0, Some(c.temb), c.groups)
    }
    fn dec_out_norm(&self) -> GroupNorm {
        GroupNorm::new("backbone.dec.out_norm", self.cfg.c0, self.cfg.groups)
    }
    fn dec_out(&self) -> Conv {
        Conv::new("backbone.dec.out", self.cfg.c0, LATENT_CHANNELS, 3, 1)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.encoder.init(ps, rng)?;
        for i in 0..3 {
            let (r, a) = self.dec_l1(i);
            r.init(ps, rng)?;
            a.init(ps, rng)?;
        }
        self.dec_up().init(ps, rng)?;
        for i in 0..3 {
            self.dec_l0(i).init(ps, rng)?;
        }
        self.dec_out_norm().init(ps)?;
        self.dec_out().init(ps, rng)
    }

    /// Noise prediction for `x_t [B, 4, H, H]` given `main [B, 4, H, H]` and
    /// `embed [B, 4]`. Residuals, when given, are added to the seven encoder
    /// junctions before the decoder reads them.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_eps<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bindings,
        x_t: Var,
        steps: &[usize],
        main: Var,
        embed: Var,
        residuals: Option<&[Var]>,
    ) -> Result<Var> {
        if g.shape(x_t) != g.shape(main) {
            return Err(Error::shape("predict_eps", g.shape(x_t), g.shape(main)));
        }
        let x = g.concat(&[x_t, main])?;
        let enc = self.encoder.forward(g, b, x, steps, embed)?;
        let mut junctions = enc.junctions;
        if let Some(res) = residuals {
            if res.len() != junctions.len() {
                return Err(Error::shape("residuals", &[res.len()], &[junctions.len()]));
            }
            for (j, &r) in junctions.iter_mut().zip(res) {
                if g.shape(*j) != g.shape(r) {
                    return Err(Error::shape("residual", g.shape(r), g.shape(*j)));
                }
                *j = g.add(*j, r)?;
            }
        }
        let (temb, ctx) = (enc.temb, enc.ctx);
        let mut h = junctions[6];
        for i in 0..3 {
            let (r, a) = self.dec_l1(i);
            let cat = g.concat(&[h, junctions[5 - i]])?;
            h = r.forward(g, b, cat, Some(temb))?;
            h = a.forward(g, b, h, Some(ctx))?;
        }
        h = self.dec_up().forward(g, b, h)?;
        for i in 0..3 {
            let cat = g.concat(&[h, junctions[2 - i]])?;
            h = self.dec_l0(i).forward(g, b, cat, Some(temb))?;
        }
        let h = self.dec_out_norm().forward(g, b, h)?;
        let h = g.silu(h)?;
        self.dec_out().forward(g, b, h)
    }
}

/// Draws for one diffusion-loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw<T> {
    pub steps: Vec<usize>,
    pub eps: Tensor<T>,
}

impl<T: Real> NoiseDraw<T> {
    /// `t` uniform in `1..=T` per item and standard normal noise.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, schedule: &NoiseSchedule, shape: &[usize]) -> Self {
        let steps = (0..shape[0]).map(|_| rng.random_range(1..=schedule.steps())).collect();
        NoiseDraw { steps, eps: randn(rng, shape) }
    }
}

/// Residuals for the current `x_t`, added inside [`Backbone::predict_eps`].
pub type Injector<'f, 'a, T> = dyn FnMut(&mut Graph<'a, T>, Var, &[usize]) -> Result<Vec<Var>> + 'f;

/// Mean-square error between the drawn noise and its prediction.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss<'a, T: Real>(
    backbone: &Backbone,
    g: &mut Graph<'a, T>,
    b: &Bindings,
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    main: Var,
    embed: Var,
    draw: &NoiseDraw<T>,
    injector: Option<&mut Injector<'_, 'a, T>>,
) -> Result<Var> {
    let x_t = schedule.q_sample_batch(x0, &draw.steps, &draw.eps)?;
    let x_t = g.constant(x_t);
    let residuals = match injector {
        Some(f) => Some(f(g, x_t, &draw.steps)?),
        None => None,
    };
    let eps_hat = backbone.predict_eps(g, b, x_t, &draw.steps, main, embed, residuals.as_deref())?;
    let eps = g.constant(draw.eps.clone());
    g.mse(eps_hat, eps)
}

/// Residual source for [`ddpm_sample`], rebuilt on every step's graph.
pub type SampleInjector<'f, T> =
    dyn for<'a> FnMut(&mut Graph<'a, T>, &Bindings, Var, &[usize]) -> Result<Vec<Var>> + 'f;

/// Per-step callback for diagnostics: `(t, x_t)` after each update.
pub type StepHook<'h, T> = dyn FnMut(usize, &Tensor<T>) + 'h;

/// Ancestral sampling from `x_T ~ N(0, I)`. The predicted `x_0` is clipped to
/// the latent range `[-1, 1]` before forming the posterior mean; no noise is
/// added on the final step.
#[allow(clippy::too_many_arguments)]
pub fn ddpm_sample<T: Real, R: Rng + ?Sized>(
    backbone: &Backbone,
    params: &ParamSet<T>,
    schedule: &NoiseSchedule,
    main: &Tensor<T>,
    embed: &Tensor<T>,
    rng: &mut R,
    mut injector: Option<&mut SampleInjector<'_, T>>,
    mut hook: Option<&mut StepHook<'_, T>>,
) -> Result<Tensor<T>> {
    let shape = main.shape().to_vec();
    let bsz = shape[0];
    let mut x = randn::<T, R>(rng, &shape);
    for t in (1..=schedule.steps()).rev() {
        let steps = vec![t; bsz];
        let eps = {
            let mut g = Graph::new();
            let b = g.bind_frozen(params);
            let xv = g.constant(x.clone());
            let mv = g.constant(main.clone());
            let ev = g.constant(embed.clone());
            let residuals = match injector.as_mut() {
                Some(f) => Some(f(&mut g, &b, xv, &steps)?),
                None => None,
            };
            let y = backbone.predict_eps(&mut g, &b, xv, &steps, mv, ev, residuals.as_deref())?;
            g.value(y).clone()
        };
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let beta = schedule.beta(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = schedule.alphas[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sd = if t > 1 { schedule.posterior_variance(t).sqrt() } else { 0.0 };
        let noise = if t > 1 { Some(randn::<T, R>(rng, &shape)) } else { None };
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut next = Vec::with_capacity(x.numel());
        for (i, (&xi, &ei)) in x.data().iter().zip(eps.data()).enumerate() {
            let (xf, ef) = (xi.as_f64(), ei.as_f64());
            let x0 = ((xf - sb * ef) / sa).clamp(-1.0, 1.0);
            let mut v = c0 * x0 + ct * xf;
            if let Some(n) = &noise {
                v += sd * n.data()[i].as_f64();
            }
            next.push(T::c(v));
        }
        x = Tensor::new(&shape, next)?;
        if !x.all_finite() {
            return Err(Error::NonFinite { op: "ddpm_sample" });
        }
        if let Some(h) = hook.as_mut() {
            h(t, &x);
        }
    }
    Ok(x)
}
