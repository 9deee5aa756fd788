use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

struct GroupNormFn<T> {
    batch: usize,
    channels: usize,
    groups: usize,
    inner: usize,
    mean: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Real> GroupNormFn<T> {
    fn per_group(&self) -> usize {
        self.channels / self.groups
    }
}

impl<T: Real> Function<T> for GroupNormFn<T> {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (xd, gamma, gd) = (x[0].data(), x[1].data(), g.data());
        let cg = self.per_group();
        let span = cg * self.inner;
        let count = T::c(span as f64);
        let mut dx = vec![T::zero(); xd.len()];
        let mut dgamma = vec![T::zero(); self.channels];
        let mut dbeta = vec![T::zero(); self.channels];
        for b in 0..self.batch {
            for grp in 0..self.groups {
                let k = b * self.groups + grp;
                let (mu, rs) = (self.mean[k], self.rstd[k]);
                let base = (b * self.channels + grp * cg) * self.inner;
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for i in 0..span {
                    let c = grp * cg + i / self.inner;
                    let xhat = (xd[base + i] - mu) * rs;
                    let gi = gd[base + i];
                    let d = gi * gamma[c];
                    sum_d += d;
                    sum_dx += d * xhat;
                    dgamma[c] += gi * xhat;
                    dbeta[c] += gi;
                }
                let (md, mdx) = (sum_d / count, sum_dx / count);
                for i in 0..span {
                    let c = grp * cg + i / self.inner;
                    let xhat = (xd[base + i] - mu) * rs;
                    dx[base + i] = rs * (gd[base + i] * gamma[c] - md - xhat * mdx);
                }
            }
        }
        let shape_c = [self.channels];
        Ok(vec![
            needs[0].then(|| Tensor::new(x[0].shape(), dx).expect("dx")),
            needs[1].then(|| Tensor::new(&shape_c, dgamma).expect("dgamma")),
            needs[2].then(|| Tensor::new(&shape_c, dbeta).expect("dbeta")),
        ])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Group normalization over `[B, C, ...]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || !s[1].is_multiple_of(groups) {
            return Err(Error::shape("group_norm", &s, &[groups]));
        }
        let (batch, channels) = (s[0], s[1]);
        for p in [gamma, beta] {
            if self.shape(p) != [channels] {
                return Err(Error::shape("group_norm", &s, self.shape(p)));
            }
        }
        let inner: usize = s[2..].iter().product();
        let cg = channels / groups;
        let span = cg * inner;
        let count = T::c(span as f64);
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xd.len()];
        let mut mean = Vec::with_capacity(batch * groups);
        let mut rstd = Vec::with_capacity(batch * groups);
        for b in 0..batch {
            for grp in 0..groups {
                let base = (b * channels + grp * cg) * inner;
                let seg = &xd[base..base + span];
                let mu = seg.iter().copied().sum::<T>() / count;
                let var = seg.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / count;
                let rs = T::one() / (var + T::c(eps)).sqrt();
                for ci in 0..cg {
                    let c = grp * cg + ci;
                    let (scale, shift) = (rs * gd[c], bd[c] - mu * rs * gd[c]);
                    let o = base + ci * inner;
                    for (d, &v) in out[o..o + inner].iter_mut().zip(&xd[o..o + inner]) {
                        *d = v * scale + shift;
                    }
                }
                mean.push(mu);
                rstd.push(rs);
            }
        }
        let v = Tensor::new(&s, out)?;
        self.apply("group_norm", &[x, gamma, beta], v, GroupNormFn { batch, channels, groups, inner, mean, rstd })
    }
}
