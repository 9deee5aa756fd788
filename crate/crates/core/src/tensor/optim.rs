use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// First and second moment estimates plus the bias-correction step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

/// Adam with bias correction and optional global gradient-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            state: AdamState { step: 0, m: BTreeMap::new(), v: BTreeMap::new() },
        }
    }

    /// Update every trainable entry of `params`; frozen entries are left
    /// untouched and need no gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, p) in params.iter() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.to_string()))?;
            if g.shape() != p.tensor.shape() {
                return Err(Error::shape("adam", p.tensor.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { op: "adam" });
            }
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let total: f64 = params
                    .iter()
                    .filter(|(_, p)| p.trainable)
                    .map(|(k, _)| grads[k].l2_norm().powi(2))
                    .sum::<f64>()
                    .sqrt();
                if total > max {
                    max / total
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let step_size = T::c(self.lr / bc1);
        let eps = T::c(self.eps);
        let inv_bc2 = T::c(1.0 / bc2);
        let gscale = T::c(scale);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = &grads[name];
            let shape = p.tensor.shape().to_vec();
            let m = self.state.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.state.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(&shape));
            if m.shape() != shape.as_slice() || v.shape() != shape.as_slice() {
                return Err(Error::shape("adam state", &shape, m.shape()));
            }
            for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                let gi = gi * gscale;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *w -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
