//! The differentiable op catalog. Each op is a [`Graph`](super::Graph)
//! method plus a `Function` carrying whatever its backward pass needs.
//! Shapes are never broadcast implicitly: every coercion has its own op.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
pub mod sample;
mod shape;
mod softmax;

use crate::real::Real;

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
