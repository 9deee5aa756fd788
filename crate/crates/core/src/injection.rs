//! Target-view feature injection: a trainable copy of the backbone encoder
//! reads the fused latent (and optionally the noisy latent) and emits one
//! residual per decoder junction through zero-initialized 1x1 links.

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::camera::ViewDelta;
use crate::diffusion::{BackboneConfig, Encoder};
use crate::error::{Error, Result};
use crate::lifting::{embed_batch, LATENT_CHANNELS};
use crate::nn::Conv;
use crate::real::Real;
use crate::tensor::{Bindings, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Debug)]
pub struct InjectionNet {
    pub encoder: Encoder,
    pub use_xt: bool,
    /// Side of the square latent the residuals are shaped for.
    pub size: usize,
    junctions: Vec<[usize; 3]>,
}

impl InjectionNet {
    pub const PREFIX: &'static str = "inject";
    pub const ENCODER_PREFIX: &'static str = "inject.enc";

    /// Residual shapes are fixed here against the backbone's junctions.
    pub fn new(cfg: BackboneConfig, use_xt: bool, size: usize) -> Result<Self> {
        if size < 2 || !size.is_multiple_of(2) {
            return Err(Error::Invalid(format!("latent size {size} must be even and at least 2")));
        }
        let in_channels = if use_xt { 2 * LATENT_CHANNELS } else { LATENT_CHANNELS };
        let junctions = cfg.junction_shapes(size);
        let encoder = Encoder::new(cfg, Self::ENCODER_PREFIX, in_channels)?;
        Ok(InjectionNet { encoder, use_xt, size, junctions })
    }

    pub fn junction_shapes(&self) -> &[[usize; 3]] {
        &self.junctions
    }

    fn link(&self, i: usize) -> Conv {
        let c = self.junctions[i][0];
        Conv::new(format!("{}.link{i}", Self::PREFIX), c, c, 1, 1)
    }

    /// Copy `backbone.enc.*` (stem excluded) into `inject.enc.*`, draw a
    /// fresh stem and zero every link. All new entries are trainable.
    pub fn init_from_backbone<T: Real, R: Rng + ?Sized>(
        &self,
        backbone: &ParamSet<T>,
        out: &mut ParamSet<T>,
        rng: &mut R,
    ) -> Result<()> {
        let src = format!("{}.", crate::diffusion::Backbone::ENCODER_PREFIX);
        let stem = format!("{src}conv_in.");
        let mut copied = 0;
        for (name, p) in backbone.iter() {
            if let Some(rest) = name.strip_prefix(&src) {
                if name.starts_with(&stem) {
                    continue;
                }
                out.insert(&format!("{}.{rest}", Self::ENCODER_PREFIX), p.tensor.clone(), true)?;
                copied += 1;
            }
        }
        if copied == 0 {
            return Err(Error::MissingParam(src));
        }
        self.encoder.stem().init(out, rng)?;
        for i in 0..self.junctions.len() {
            self.link(i).init_zero(out)?;
        }
        Ok(())
    }

    /// Residuals for `x_t [B, 4, H, H]` from `f_t [B, 4, H, H]`, with the
    /// main-view-to-target delta embedding `[B, 4]`.
    pub fn compute_residuals<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bindings,
        f_t: Var,
        x_t: Var,
        steps: &[usize],
        embed: Var,
    ) -> Result<Vec<Var>> {
        let expect = [steps.len(), LATENT_CHANNELS, self.size, self.size];
        for v in [f_t, x_t] {
            if g.shape(v) != expect {
                return Err(Error::shape("compute_residuals", g.shape(v), &expect));
            }
        }
        let x = if self.use_xt { g.concat(&[f_t, x_t])? } else { f_t };
        let enc = self.encoder.forward(g, b, x, steps, embed)?;
        enc.junctions.into_iter().enumerate().map(|(i, h)| self.link(i).forward(g, b, h)).collect()
    }

    /// Mean residual RMS over junctions for each main-to-target azimuth
    /// delta in `sweep_deg`, holding everything else fixed.
    pub fn gating_probe<T: Real>(
        &self,
        params: &ParamSet<T>,
        f_t: &Tensor<T>,
        x_t: &Tensor<T>,
        t: usize,
        sweep_deg: &[f64],
    ) -> Result<Vec<(f64, f64)>> {
        let bsz = f_t.shape().first().copied().unwrap_or(0);
        sweep_deg
            .iter()
            .map(|&deg| {
                let delta =
                    ViewDelta { d_theta: crate::camera::wrap_angle(deg.to_radians()), d_phi: 0.0, d_radius: 0.0 };
                let embed = embed_batch::<T>(&alloc::vec![delta; bsz]);
                let mut g = Graph::new();
                let b = g.bind_frozen(params);
                let fv = g.constant(f_t.clone());
                let xv = g.constant(x_t.clone());
                let ev = g.constant(embed);
                let res = self.compute_residuals(&mut g, &b, fv, xv, &alloc::vec![t; bsz], ev)?;
                let mut acc = 0.0;
                for r in &res {
                    let v = g.value(*r);
                    let ss: f64 = v.data().iter().map(|x| x.as_f64() * x.as_f64()).sum();
                    acc += (ss / v.numel().max(1) as f64).sqrt();
                }
                Ok((deg, acc / res.len() as f64))
            })
            .collect()
    }

    /// Entry count of the injection parameter set, from shapes alone.
    pub fn expected_param_count(&self, backbone: &ParamSet<impl Real>) -> usize {
        let src = format!("{}.", crate::diffusion::Backbone::ENCODER_PREFIX);
        let stem = format!("{src}conv_in.");
        let encoder: usize = backbone
            .iter()
            .filter(|(n, _)| n.starts_with(&src) && !n.starts_with(&stem))
            .map(|(_, p)| p.tensor.numel())
            .sum();
        let c = self.encoder.in_channels;
        let c0 = self.encoder.cfg.c0;
        let stem_count = c0 * c * 9 + c0;
        let links: usize = self.junctions.iter().map(|s| s[0] * s[0] + s[0]).sum();
        encoder + stem_count + links
    }
}
