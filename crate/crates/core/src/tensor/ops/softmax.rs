use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};
#[cfg(not(feature = "std"))]
use num_traits::Float;

struct SoftmaxFn;

impl<T: Real> Function<T> for SoftmaxFn {
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let n = *y.shape().last().expect("rank checked in forward");
        let mut dx = vec![T::zero(); y.numel()];
        for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                *d = yi * (gi - dot);
            }
        }
        Ok(vec![Some(Tensor::new(y.shape(), dx)?)])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| Error::shape("softmax", &s, &[]))?;
        if n == 0 {
            return Err(Error::shape("softmax", &s, &[]));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.apply("softmax", &[x], out, SoftmaxFn)
    }

    /// Scaled dot-product attention: `softmax(q k^T / sqrt(d)) v` over
    /// `q [B, N, d]`, `k [B, M, d]`, `v [B, M, dv]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let d = *self.shape(q).last().ok_or_else(|| Error::shape("attention", &[], &[]))?;
        let scores = self.matmul_t(q, k, false, true)?;
        let scores = self.scale(scores, T::c(1.0 / (d as f64).sqrt()))?;
        let p = self.softmax(scores)?;
        self.matmul(p, v)
    }
}
