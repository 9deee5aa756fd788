use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

struct SumFn;
impl<T: Real> Function<T> for SumFn {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::full(x[0].shape(), g.item()?))])
    }
}

struct MeanSquareFn;
impl<T: Real> Function<T> for MeanSquareFn {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let k = g.item()? * T::c(2.0 / x[0].numel() as f64);
        let d = x[0].data().iter().map(|&v| v * k).collect();
        Ok(vec![Some(Tensor::new(x[0].shape(), d)?)])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.apply("sum", &[x], Tensor::scalar(s), SumFn)
    }

    /// Mean of squared elements, as a scalar.
    pub fn mean_square(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = T::c(xv.numel().max(1) as f64);
        let s: T = xv.data().iter().map(|&v| v * v).sum::<T>() / n;
        self.apply("mean_square", &[x], Tensor::scalar(s), MeanSquareFn)
    }

    /// `mean((a - b)^2)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        self.mean_square(d)
    }

    /// `sum(x * w)` for a constant weight tensor; handy as a probe loss.
    pub fn dot_const(&mut self, x: Var, w: Tensor<T>) -> Result<Var> {
        let wv = self.constant(w);
        let p = self.mul(x, wv)?;
        self.sum(p)
    }
}
