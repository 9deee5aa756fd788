//! Target-aware lifting: a latent image plus the delta from its view to the
//! target becomes a tri-plane in that view's frame.
//!
//! conv stem, two residual blocks at full resolution, a stride-2 conv, two
//! residual blocks, self-attention and delta cross-attention at half
//! resolution, then a transposed conv back up, concatenation with the
//! full-resolution skip, and a conv head emitting `3C` channels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::camera::{view_delta, CameraPose, ViewDelta};
use crate::error::{Error, Result};
use crate::nn::{Attention, ContextEmbed, Conv, GroupNorm, ResBlock, Upsample};
use crate::real::Real;
use crate::tensor::{Bindings, Graph, ParamSet, Tensor, Var};
use crate::triplane::TriPlane;

/// Channels of every latent grid.
pub const LATENT_CHANNELS: usize = 4;

/// A `[4, H, W]` latent grid and the pose it was seen from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentImage<T> {
    pub grid: Tensor<T>,
    pub pose: CameraPose,
}

impl<T: Real> LatentImage<T> {
    pub fn new(grid: Tensor<T>, pose: CameraPose) -> Result<Self> {
        let s = grid.shape();
        if s.len() != 3 || s[0] != LATENT_CHANNELS || s[1] != s[2] || s[1] == 0 {
            return Err(Error::shape("latent image", s, &[LATENT_CHANNELS]));
        }
        if !grid.all_finite() {
            return Err(Error::NonFinite { op: "latent image" });
        }
        Ok(LatentImage { grid, pose })
    }

    pub fn size(&self) -> usize {
        self.grid.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftConfig {
    pub dim: usize,
    pub groups: usize,
    pub ctx_tokens: usize,
    pub ctx_dim: usize,
    /// Channels per plane, density first.
    pub plane_channels: usize,
    /// Half-width of the cube the planes span.
    pub extent: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig { dim: 32, groups: 8, ctx_tokens: 4, ctx_dim: 32, plane_channels: 8, extent: 1.75 }
    }
}

#[derive(Clone, Debug)]
pub struct LiftingNet {
    pub cfg: LiftConfig,
    prefix: String,
}

impl LiftingNet {
    pub const PREFIX: &'static str = "lift";

    pub fn new(cfg: LiftConfig) -> Result<Self> {
        if cfg.plane_channels < 2 {
            return Err(Error::Invalid(format!("plane_channels = {} must be at least 2", cfg.plane_channels)));
        }
        if cfg.groups == 0 || !cfg.dim.is_multiple_of(cfg.groups) {
            return Err(Error::Invalid(format!("lift dim {} does not split into {} groups", cfg.dim, cfg.groups)));
        }
        Ok(LiftingNet { cfg, prefix: Self::PREFIX.into() })
    }

    fn n(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    fn ctx(&self) -> ContextEmbed {
        ContextEmbed { name: self.n("ctx"), tokens: self.cfg.ctx_tokens, dim: self.cfg.ctx_dim }
    }
    fn conv_in(&self) -> Conv {
        Conv::new(self.n("conv_in"), LATENT_CHANNELS, self.cfg.dim, 3, 1)
    }
    fn res(&self, level: usize, i: usize) -> ResBlock {
        let d = self.cfg.dim;
        ResBlock::new(self.n(&format!("res{level}.{i}")), d, d, None, self.cfg.groups)
    }
    fn down(&self) -> Conv {
        Conv::new(self.n("down"), self.cfg.dim, self.cfg.dim, 3, 2)
    }
    fn attn(&self) -> Attention {
        Attention::self_attention(self.n("attn"), self.cfg.dim, self.cfg.groups)
    }
    fn xattn(&self) -> Attention {
        Attention::cross_attention(self.n("xattn"), self.cfg.dim, self.cfg.ctx_dim, self.cfg.groups)
    }
    fn up(&self) -> Upsample {
        Upsample { name: self.n("up"), cin: self.cfg.dim, cout: self.cfg.dim }
    }
    fn out_norm(&self) -> GroupNorm {
        GroupNorm::new(self.n("out_norm"), 2 * self.cfg.dim, self.cfg.groups)
    }
    fn out(&self) -> Conv {
        Conv::new(self.n("out"), 2 * self.cfg.dim, 3 * self.cfg.plane_channels, 3, 1)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        self.ctx().init(ps, rng)?;
        self.conv_in().init(ps, rng)?;
        for level in 0..2 {
            for i in 0..2 {
                self.res(level, i).init(ps, rng)?;
            }
        }
        self.down().init(ps, rng)?;
        self.attn().init(ps, rng)?;
        self.xattn().init(ps, rng)?;
        self.up().init(ps, rng)?;
        self.out_norm().init(ps)?;
        self.out().init(ps, rng)
    }

    /// `x [B, 4, H, H]` (H even) and `embed [B, 4]` to planes `[B, 3C, H, H]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, b: &Bindings, x: Var, embed: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != LATENT_CHANNELS || s[2] != s[3] || s[2] < 2 || !s[2].is_multiple_of(2) {
            return Err(Error::shape("lift", &s, &[LATENT_CHANNELS]));
        }
        if g.shape(embed) != [s[0], 4] {
            return Err(Error::shape("lift embed", g.shape(embed), &[s[0], 4]));
        }
        let ctx = self.ctx().forward(g, b, embed)?;
        let mut h = self.conv_in().forward(g, b, x)?;
        for i in 0..2 {
            h = self.res(0, i).forward(g, b, h, None)?;
        }
        let skip = h;
        h = self.down().forward(g, b, h)?;
        for i in 0..2 {
            h = self.res(1, i).forward(g, b, h, None)?;
        }
        h = self.attn().forward(g, b, h, None)?;
        h = self.xattn().forward(g, b, h, Some(ctx))?;
        h = self.up().forward(g, b, h)?;
        let h = g.concat(&[h, skip])?;
        let h = self.out_norm().forward(g, b, h)?;
        let h = g.silu(h)?;
        self.out().forward(g, b, h)
    }

    /// Lift one view without recording gradients.
    pub fn lift<T: Real>(&self, ps: &ParamSet<T>, x: &LatentImage<T>, delta: &ViewDelta) -> Result<TriPlane<T>> {
        let mut out = self.lift_batch(ps, core::slice::from_ref(x), &[*delta])?;
        Ok(out.pop().expect("one view"))
    }

    /// Lift every view toward `target`, preserving order.
    pub fn lift_all<T: Real>(
        &self,
        ps: &ParamSet<T>,
        views: &[LatentImage<T>],
        target: &CameraPose,
    ) -> Result<Vec<TriPlane<T>>> {
        if views.is_empty() {
            return Err(Error::Empty("lift_all views"));
        }
        let deltas: Vec<ViewDelta> = views.iter().map(|v| view_delta(&v.pose, target)).collect();
        self.lift_batch(ps, views, &deltas)
    }

    fn lift_batch<T: Real>(
        &self,
        ps: &ParamSet<T>,
        views: &[LatentImage<T>],
        deltas: &[ViewDelta],
    ) -> Result<Vec<TriPlane<T>>> {
        let grids = Tensor::stack(&views.iter().map(|v| &v.grid).collect::<Vec<_>>())?;
        let embed = embed_batch(deltas);
        let mut g = Graph::new();
        let b = g.bind_frozen(ps);
        let x = g.constant(grids);
        let e = g.constant(embed);
        let y = self.forward(&mut g, &b, x, e)?;
        let planes = g.value(y);
        views.iter().enumerate().map(|(i, v)| TriPlane::new(planes.index0(i)?, v.pose, self.cfg.extent)).collect()
    }
}

/// Stack delta embeddings into `[B, 4]`.
pub fn embed_batch<T: Real>(deltas: &[ViewDelta]) -> Tensor<T> {
    let data = deltas.iter().flat_map(|d| d.embed()).map(T::c).collect();
    Tensor::new(&[deltas.len(), 4], data).expect("embed shape")
}
