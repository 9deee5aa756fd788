use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

struct ReshapeFn {
    from: Vec<usize>,
}
impl<T: Real> Function<T> for ReshapeFn {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone().reshaped(&self.from)?)])
    }
}

/// Swap the last two axes of `[batch.., m, n]`.
fn transpose_last2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = x.numel() / (m * n).max(1);
    let xd = x.data();
    let mut out = Vec::with_capacity(x.numel());
    for b in 0..batch {
        let base = b * m * n;
        for j in 0..n {
            for i in 0..m {
                out.push(xd[base + i * n + j]);
            }
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape.swap(r - 2, r - 1);
    Tensor::new(&shape, out).expect("transpose shape")
}

struct TransposeFn;
impl<T: Real> Function<T> for TransposeFn {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(transpose_last2(g))])
    }
}

struct ConcatFn {
    outer: usize,
    inner: usize,
    widths: Vec<usize>,
}
impl<T: Real> Function<T> for ConcatFn {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let total: usize = self.widths.iter().sum();
        let gd = g.data();
        let mut out = Vec::with_capacity(x.len());
        let mut offset = 0;
        for (k, &w) in self.widths.iter().enumerate() {
            if needs[k] {
                let mut d = Vec::with_capacity(self.outer * w * self.inner);
                for o in 0..self.outer {
                    let start = (o * total + offset) * self.inner;
                    d.extend_from_slice(&gd[start..start + w * self.inner]);
                }
                out.push(Some(Tensor::new(x[k].shape(), d)?));
            } else {
                out.push(None);
            }
            offset += w;
        }
        Ok(out)
    }
}

struct SliceFn {
    outer: usize,
    inner: usize,
    total: usize,
    start: usize,
    len: usize,
}
impl<T: Real> Function<T> for SliceFn {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let mut d = Tensor::zeros(x[0].shape());
        let gd = g.data();
        let block = self.len * self.inner;
        for o in 0..self.outer {
            let dst = (o * self.total + self.start) * self.inner;
            d.data_mut()[dst..dst + block].copy_from_slice(&gd[o * block..(o + 1) * block]);
        }
        Ok(vec![Some(d)])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(x).to_vec();
        let v = self.value(x).clone().reshaped(shape)?;
        self.apply("reshape", &[x], v, ReshapeFn { from })
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let v = transpose_last2(self.value(x));
        self.apply("transpose", &[x], v, TransposeFn)
    }

    /// Concatenate along axis 1; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::Empty("concat"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() < 2 {
            return Err(Error::shape("concat", &s0, &[]));
        }
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(Error::shape("concat", &s0, s));
            }
            widths.push(s[1]);
        }
        let outer = s0[0];
        let inner: usize = s0[2..].iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                let d = self.value(x).data();
                data.extend_from_slice(&d[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total;
        let v = Tensor::new(&shape, data)?;
        self.apply("concat", xs, v, ConcatFn { outer, inner, widths })
    }

    /// Channels `start..start + len` along axis 1.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || start + len > s[1] || len == 0 {
            return Err(Error::shape("slice", &s, &[start, len]));
        }
        let outer = s[0];
        let total = s[1];
        let inner: usize = s[2..].iter().product();
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * total + start) * inner;
            data.extend_from_slice(&xd[src..src + len * inner]);
        }
        let mut shape = s.clone();
        shape[1] = len;
        let v = Tensor::new(&shape, data)?;
        self.apply("slice", &[x], v, SliceFn { outer, inner, total, start, len })
    }
}
