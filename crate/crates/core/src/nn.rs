//! Layers shared by the lifting network, the denoiser and its encoder clone.
//!
//! A layer is a small descriptor holding its parameter-name prefix and
//! sizes. `init` inserts its entries into a [`ParamSet`]; `forward` records
//! ops on a [`Graph`] using handles from the matching [`Bindings`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Bindings, Graph, ParamSet, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

/// Normal samples with standard deviation `std`, redrawn beyond two sigmas.
pub fn trunc_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break T::c(z * std);
        }
    })
}

fn join(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// `k x k` convolution with "same" padding at stride 1.
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Conv { name: name.into(), cin, cout, k, stride, pad: k / 2 }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        ps.insert(&join(&self.name, "w"), trunc_normal(rng, &[self.cout, self.cin, self.k, self.k], INIT_STD), true)?;
        ps.insert(&join(&self.name, "b"), Tensor::zeros(&[self.cout]), true)
    }

    pub fn init_zero<T: Real>(&self, ps: &mut ParamSet<T>) -> Result<()> {
        ps.insert(&join(&self.name, "w"), Tensor::zeros(&[self.cout, self.cin, self.k, self.k]), true)?;
        ps.insert(&join(&self.name, "b"), Tensor::zeros(&[self.cout]), true)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var) -> Result<Var> {
        let w = b.get(&join(&self.name, "w"))?;
        let bias = b.get(&join(&self.name, "b"))?;
        g.conv2d(x, w, Some(bias), self.stride, self.pad)
    }
}

/// Kernel-4, stride-2, padding-1 transposed convolution: doubles H and W.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
}

impl Upsample {
    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        ps.insert(&join(&self.name, "w"), trunc_normal(rng, &[self.cin, self.cout, 4, 4], INIT_STD), true)?;
        ps.insert(&join(&self.name, "b"), Tensor::zeros(&[self.cout]), true)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var) -> Result<Var> {
        let w = b.get(&join(&self.name, "w"))?;
        let bias = b.get(&join(&self.name, "b"))?;
        g.conv_transpose2d(x, w, Some(bias), 2, 1)
    }
}

/// `y = x W + b` over rows of `x [N, din]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Linear { name: name.into(), din, dout }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        ps.insert(&join(&self.name, "w"), trunc_normal(rng, &[self.din, self.dout], INIT_STD), true)?;
        ps.insert(&join(&self.name, "b"), Tensor::zeros(&[self.dout]), true)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var) -> Result<Var> {
        let y = g.matmul(x, b.get(&join(&self.name, "w"))?)?;
        g.add_bias(y, b.get(&join(&self.name, "b"))?)
    }

    /// Apply to the last axis of a rank-3 `[B, N, din]` input.
    pub fn forward_tokens<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.din {
            return Err(Error::shape("linear tokens", &s, &[self.din, self.dout]));
        }
        let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
        let y = self.forward(g, b, flat)?;
        g.reshape(y, &[s[0], s[1], self.dout])
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(name: impl Into<String>, channels: usize, groups: usize) -> Self {
        GroupNorm { name: name.into(), channels, groups }
    }

    pub fn init<T: Real>(&self, ps: &mut ParamSet<T>) -> Result<()> {
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::Invalid(format!(
                "{}: {} channels do not split into {} groups",
                self.name, self.channels, self.groups
            )));
        }
        ps.insert(&join(&self.name, "gamma"), Tensor::full(&[self.channels], T::one()), true)?;
        ps.insert(&join(&self.name, "beta"), Tensor::zeros(&[self.channels]), true)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var) -> Result<Var> {
        let gamma = b.get(&join(&self.name, "gamma"))?;
        let beta = b.get(&join(&self.name, "beta"))?;
        g.group_norm(x, gamma, beta, self.groups, NORM_EPS)
    }
}

/// Pre-activation residual block with an optional per-channel time shift.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub temb: Option<usize>,
    pub groups: usize,
}

impl ResBlock {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, temb: Option<usize>, groups: usize) -> Self {
        ResBlock { name: name.into(), cin, cout, temb, groups }
    }

    fn norm1(&self) -> GroupNorm {
        GroupNorm::new(join(&self.name, "norm1"), self.cin, self.groups)
    }
    fn conv1(&self) -> Conv {
        Conv::new(join(&self.name, "conv1"), self.cin, self.cout, 3, 1)
    }
    fn temb_proj(&self) -> Option<Linear> {
        self.temb.map(|d| Linear::new(join(&self.name, "temb"), d, self.cout))
    }
    fn norm2(&self) -> GroupNorm {
        GroupNorm::new(join(&self.name, "norm2"), self.cout, self.groups)
    }
    fn conv2(&self) -> Conv {
        Conv::new(join(&self.name, "conv2"), self.cout, self.cout, 3, 1)
    }
    fn skip(&self) -> Option<Conv> {
        (self.cin != self.cout).then(|| Conv::new(join(&self.name, "skip"), self.cin, self.cout, 1, 1))
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.norm1().init(ps)?;
        self.conv1().init(ps, rng)?;
        if let Some(l) = self.temb_proj() {
            l.init(ps, rng)?;
        }
        self.norm2().init(ps)?;
        self.conv2().init(ps, rng)?;
        if let Some(s) = self.skip() {
            s.init(ps, rng)?;
        }
        Ok(())
    }

    /// `temb` is the already activated time embedding `[B, d]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var, temb: Option<Var>) -> Result<Var> {
        let h = self.norm1().forward(g, b, x)?;
        let h = g.silu(h)?;
        let mut h = self.conv1().forward(g, b, h)?;
        if let Some(l) = self.temb_proj() {
            let t = temb.ok_or_else(|| Error::Invalid(format!("{} needs a time embedding", self.name)))?;
            let shift = l.forward(g, b, t)?;
            h = g.add_per_channel(h, shift)?;
        }
        let h = self.norm2().forward(g, b, h)?;
        let h = g.silu(h)?;
        let h = self.conv2().forward(g, b, h)?;
        let skip = match self.skip() {
            Some(s) => s.forward(g, b, x)?,
            None => x,
        };
        g.add(h, skip)
    }
}

/// `[B, C, H, W]` to tokens `[B, HW, C]`.
fn to_tokens<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    g.transpose(flat)
}

fn from_tokens<T: Real>(g: &mut Graph<'_, T>, t: Var, shape: &[usize]) -> Result<Var> {
    let c = g.transpose(t)?;
    g.reshape(c, shape)
}

/// Single-head attention block with a residual connection. Keys and values
/// come from the feature map itself or from context tokens.
#[derive(Clone, Debug)]
pub struct Attention {
    pub name: String,
    pub channels: usize,
    /// Context token width for cross-attention; `None` for self-attention.
    pub ctx_dim: Option<usize>,
    pub groups: usize,
}

impl Attention {
    pub fn self_attention(name: impl Into<String>, channels: usize, groups: usize) -> Self {
        Attention { name: name.into(), channels, ctx_dim: None, groups }
    }

    pub fn cross_attention(name: impl Into<String>, channels: usize, ctx_dim: usize, groups: usize) -> Self {
        Attention { name: name.into(), channels, ctx_dim: Some(ctx_dim), groups }
    }

    fn layers(&self) -> (GroupNorm, Linear, Linear, Linear, Linear) {
        let c = self.channels;
        let kv_in = self.ctx_dim.unwrap_or(c);
        (
            GroupNorm::new(join(&self.name, "norm"), c, self.groups),
            Linear::new(join(&self.name, "q"), c, c),
            Linear::new(join(&self.name, "k"), kv_in, c),
            Linear::new(join(&self.name, "v"), kv_in, c),
            Linear::new(join(&self.name, "out"), c, c),
        )
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        let (n, q, k, v, o) = self.layers();
        n.init(ps)?;
        q.init(ps, rng)?;
        k.init(ps, rng)?;
        v.init(ps, rng)?;
        o.init(ps, rng)
    }

    /// `context [B, M, ctx_dim]` is required for cross-attention.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var, context: Option<Var>) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (n, q, k, v, o) = self.layers();
        let h = n.forward(g, b, x)?;
        let tokens = to_tokens(g, h)?;
        let kv = match (self.ctx_dim, context) {
            (None, _) => tokens,
            (Some(_), Some(c)) => c,
            (Some(_), None) => return Err(Error::Invalid(format!("{} needs context tokens", self.name))),
        };
        let qv = q.forward_tokens(g, b, tokens)?;
        let kv_k = k.forward_tokens(g, b, kv)?;
        let kv_v = v.forward_tokens(g, b, kv)?;
        let a = g.attention(qv, kv_k, kv_v)?;
        let a = o.forward_tokens(g, b, a)?;
        let a = from_tokens(g, a, &shape)?;
        g.add(x, a)
    }
}

/// Learned linear map from a 4-vector view embedding to `tokens` context
/// tokens of width `dim`.
#[derive(Clone, Debug)]
pub struct ContextEmbed {
    pub name: String,
    pub tokens: usize,
    pub dim: usize,
}

impl ContextEmbed {
    fn proj(&self) -> Linear {
        Linear::new(self.name.clone(), 4, self.tokens * self.dim)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.proj().init(ps, rng)
    }

    /// `embed [B, 4]` to `[B, tokens, dim]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, embed: Var) -> Result<Var> {
        let bsz = g.shape(embed)[0];
        let y = self.proj().forward(g, b, embed)?;
        g.reshape(y, &[bsz, self.tokens, self.dim])
    }
}

/// Sinusoidal features of integer timesteps, `[B, dim]`, sin half first.
pub fn sinusoidal<T: Real>(steps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        let t = t as f64;
        let freqs = (0..half).map(|k| (-(10000f64.ln()) * k as f64 / half as f64).exp());
        let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((t * f).sin(), (t * f).cos())).unzip();
        out.extend(s.into_iter().chain(c).map(T::c));
        out.extend(core::iter::repeat_n(T::zero(), dim - 2 * half));
    }
    Tensor::new(&[steps.len(), dim], out).expect("sinusoidal shape")
}

/// Sinusoidal features followed by a two-layer SiLU MLP.
#[derive(Clone, Debug)]
pub struct TimeEmbed {
    pub name: String,
    pub base: usize,
    pub dim: usize,
}

impl TimeEmbed {
    fn layers(&self) -> (Linear, Linear) {
        (
            Linear::new(join(&self.name, "fc1"), self.base, self.dim),
            Linear::new(join(&self.name, "fc2"), self.dim, self.dim),
        )
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        let (a, c) = self.layers();
        a.init(ps, rng)?;
        c.init(ps, rng)
    }

    /// Activated embedding `silu(mlp(sin(t)))`, ready for residual blocks.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, steps: &[usize]) -> Result<Var> {
        let (a, c) = self.layers();
        let s = g.constant(sinusoidal(steps, self.base));
        let h = a.forward(g, b, s)?;
        let h = g.silu(h)?;
        let h = c.forward(g, b, h)?;
        g.silu(h)
    }
}
