use alloc::vec;
use alloc::vec::Vec;

use super::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn map<T: Real>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

struct AddFn;
impl<T: Real> Function<T> for AddFn {
    fn backward(
        &self,
        _: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())])
    }
}

struct SubFn;
impl<T: Real> Function<T> for SubFn {
    fn backward(
        &self,
        _: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![needs[0].then(|| g.clone()), needs[1].then(|| map(g, |v| -v))])
    }
}

struct MulFn;
impl<T: Real> Function<T> for MulFn {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![needs[0].then(|| zip_map(g, x[1], |g, b| g * b)), needs[1].then(|| zip_map(g, x[0], |g, a| g * a))])
    }
}

struct ScaleFn<T>(T);
impl<T: Real> Function<T> for ScaleFn<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let s = self.0;
        Ok(vec![Some(map(g, |v| v * s))])
    }
}

struct SiluFn;
impl<T: Real> Function<T> for SiluFn {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(zip_map(g, x[0], |g, x| {
            let s = sigmoid(x);
            g * s * (T::one() + x * (T::one() - s))
        }))])
    }
}

struct SoftplusFn;
impl<T: Real> Function<T> for SoftplusFn {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(zip_map(g, x[0], |g, x| g * sigmoid(x)))])
    }
}

/// Splits a rank >= 2 shape into (outer, channels, inner) around axis 1.
fn around_axis1(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

struct AddBiasFn {
    outer: usize,
    channels: usize,
    inner: usize,
}
impl<T: Real> Function<T> for AddBiasFn {
    fn backward(
        &self,
        _: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let db = needs[1].then(|| {
            let mut db = vec![T::zero(); self.channels];
            let gd = g.data();
            for o in 0..self.outer {
                for (c, acc) in db.iter_mut().enumerate() {
                    let base = (o * self.channels + c) * self.inner;
                    *acc += gd[base..base + self.inner].iter().copied().sum::<T>();
                }
            }
            Tensor::new(&[self.channels], db).expect("bias shape")
        });
        Ok(vec![needs[0].then(|| g.clone()), db])
    }
}

struct AddPerChannelFn {
    outer: usize,
    channels: usize,
    inner: usize,
}
impl<T: Real> Function<T> for AddPerChannelFn {
    fn backward(
        &self,
        _: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let dv = needs[1].then(|| {
            let gd = g.data();
            let v: Vec<T> = (0..self.outer * self.channels)
                .map(|oc| gd[oc * self.inner..(oc + 1) * self.inner].iter().copied().sum())
                .collect();
            Tensor::new(&[self.outer, self.channels], v).expect("per-channel shape")
        });
        Ok(vec![needs[0].then(|| g.clone()), dv])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.apply("add", &[a, b], v, AddFn)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.apply("sub", &[a, b], v, SubFn)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.apply("mul", &[a, b], v, MulFn)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = map(self.value(a), |x| x * s);
        self.apply("scale", &[a], v, ScaleFn(s))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), |x| x * sigmoid(x));
        self.apply("silu", &[a], v, SiluFn)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), softplus);
        self.apply("softplus", &[a], v, SoftplusFn)
    }

    /// `x[o, c, ...] + b[c]` for any tensor of rank >= 2.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (outer, channels, inner) = around_axis1(self.shape(x))
            .filter(|&(_, c, _)| self.shape(b) == [c])
            .ok_or_else(|| Error::shape("add_bias", self.shape(x), self.shape(b)))?;
        let bd = self.value(b).data();
        let mut v = self.value(x).clone();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            *val += bd[(i / inner) % channels];
        }
        self.apply("add_bias", &[x, b], v, AddBiasFn { outer, channels, inner })
    }

    /// `x[b, c, ...] + v[b, c]`: one offset per (item, channel).
    pub fn add_per_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let (outer, channels, inner) = around_axis1(self.shape(x))
            .filter(|&(o, c, _)| self.shape(v) == [o, c])
            .ok_or_else(|| Error::shape("add_per_channel", self.shape(x), self.shape(v)))?;
        let vd = self.value(v).data();
        let mut out = self.value(x).clone();
        for (i, val) in out.data_mut().iter_mut().enumerate() {
            *val += vd[i / inner];
        }
        self.apply("add_per_channel", &[x, v], out, AddPerChannelFn { outer, channels, inner })
    }
}
