//! Tri-plane features: three axis-aligned `P x P` planes of `C` channels,
//! stored as one `[3C, P, P]` tensor with the xy, xz and yz planes as
//! consecutive channel blocks.
//!
//! Planes live in the frame of the input camera that produced them,
//! re-centred on the look-at point: a world point `p` has local coordinates
//! `R p / extent`, where `R` is that camera's rotation.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{CameraPose, Extrinsics, Vec3};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ops::softplus;
use crate::tensor::{bilinear_corners, grid_sample_forward, Corners, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TriPlane<T> {
    /// `[3C, P, P]`.
    pub planes: Tensor<T>,
    pub frame: CameraPose,
    pub extent: f64,
}

/// Per-plane `(u, v)` of a local point in `[-1, 1]^3`, in xy, xz, yz order.
/// `u` runs along plane columns and `v` down plane rows.
#[inline]
pub fn plane_uv(q: Vec3) -> [(f64, f64); 3] {
    [(q[0], -q[1]), (q[0], q[2]), (q[2], -q[1])]
}

/// Maps world points into a tri-plane's normalized local cube.
#[derive(Clone, Copy, Debug)]
pub struct LocalFrame {
    ext: Extrinsics,
    inv_extent: f64,
}

impl LocalFrame {
    pub fn new(frame: &CameraPose, extent: f64) -> Self {
        LocalFrame { ext: frame.extrinsics(), inv_extent: 1.0 / extent }
    }

    pub fn local(&self, p: Vec3) -> Vec3 {
        let r = &self.ext.rotation;
        let s = self.inv_extent;
        [crate::camera::dot(r[0], p) * s, crate::camera::dot(r[1], p) * s, crate::camera::dot(r[2], p) * s]
    }

    /// Bilinear corners on each plane, or `None` outside the cube.
    pub fn corners<T: Real>(&self, p: Vec3, res: usize) -> Option<[Corners<T>; 3]> {
        let q = self.local(p);
        if q.iter().any(|c| c.is_nan() || c.abs() > 1.0) {
            return None;
        }
        let uv = plane_uv(q);
        let c = |k: usize| bilinear_corners(T::c(uv[k].0), T::c(uv[k].1), res);
        Some([c(0)?, c(1)?, c(2)?])
    }
}

impl<T: Real> TriPlane<T> {
    pub fn new(planes: Tensor<T>, frame: CameraPose, extent: f64) -> Result<Self> {
        let s = planes.shape();
        if s.len() != 3 || !s[0].is_multiple_of(3) || s[0] / 3 < 2 || s[1] != s[2] || s[1] < 2 {
            return Err(Error::shape("triplane", s, &[]));
        }
        if extent.is_nan() || extent <= 0.0 {
            return Err(Error::Invalid(alloc::format!("tri-plane extent {extent} must be positive")));
        }
        Ok(TriPlane { planes, frame, extent })
    }

    pub fn zeros(channels: usize, res: usize, frame: CameraPose) -> Result<Self> {
        Self::new(Tensor::zeros(&[3 * channels, res, res]), frame, 1.0)
    }

    pub fn channels(&self) -> usize {
        self.planes.shape()[0] / 3
    }

    pub fn resolution(&self) -> usize {
        self.planes.shape()[1]
    }

    /// One plane as a `[C, P, P]` slice, `k` in xy, xz, yz order.
    pub fn plane(&self, k: usize) -> &[T] {
        let n = self.channels() * self.resolution() * self.resolution();
        &self.planes.data()[k * n..(k + 1) * n]
    }

    /// Sum of the three plane samples at each world point; zero outside.
    pub fn query_points(&self, points: &[Vec3]) -> Tensor<T> {
        let (c, res) = (self.channels(), self.resolution());
        let frame = LocalFrame::new(&self.frame, self.extent);
        let mut out = vec![T::zero(); points.len() * c];
        for (p, o) in points.iter().zip(out.chunks_mut(c)) {
            if let Some(cs) = frame.corners::<T>(*p, res) {
                for (k, corner) in cs.iter().enumerate() {
                    grid_sample_forward(self.plane(k), c, res, corner, T::one(), o);
                }
            }
        }
        Tensor::new(&[points.len(), c], out).expect("query shape")
    }
}

/// Sample a `[C, P, P]` plane at `uv [N, 2]`, giving `[N, C]`.
pub fn bilinear_sample<T: Real>(plane: &Tensor<T>, uv: &Tensor<T>) -> Result<Tensor<T>> {
    let (sp, su) = (plane.shape(), uv.shape());
    if sp.len() != 3 || sp[1] != sp[2] || sp[1] < 2 || su.len() != 2 || su[1] != 2 {
        return Err(Error::shape("bilinear_sample", sp, su));
    }
    let (c, res) = (sp[0], sp[1]);
    let mut out = vec![T::zero(); su[0] * c];
    for (i, o) in out.chunks_mut(c.max(1)).enumerate().take(su[0]) {
        if let Some(k) = bilinear_corners(uv.data()[2 * i], uv.data()[2 * i + 1], res) {
            grid_sample_forward(plane.data(), c, res, &k, T::one(), o);
        }
    }
    Tensor::new(&[su[0], c], out)
}

/// `sigma = softplus(f[0])`, payload `f[1..]`, for features `[N, C]`.
pub fn decode_sigma_payload<T: Real>(features: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
    let s = features.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(Error::shape("decode_sigma_payload", s, &[]));
    }
    let (n, c) = (s[0], s[1]);
    let mut sigma = Vec::with_capacity(n);
    let mut payload = Vec::with_capacity(n * (c - 1));
    for row in features.data().chunks(c) {
        sigma.push(softplus(row[0]));
        payload.extend_from_slice(&row[1..]);
    }
    Ok((sigma, Tensor::new(&[n, c - 1], payload)?))
}
