//! Align-corners bilinear sampling of `[C, P, P]` planes at `(u, v)` in
//! `[-1, 1]^2`; `u` indexes columns, `v` rows. Points outside read zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

/// The four texels around a sample point, their weights, and the weight
/// derivatives with respect to `u` and `v`.
#[derive(Clone, Copy, Debug)]
pub struct Corners<T> {
    pub idx: [usize; 4],
    pub w: [T; 4],
    pub dw_du: [T; 4],
    pub dw_dv: [T; 4],
}

/// Corner texels for a `res x res` plane, or `None` outside `[-1, 1]^2`.
pub fn bilinear_corners<T: Real>(u: T, v: T, res: usize) -> Option<Corners<T>> {
    let one = T::one();
    if res < 2 || !(u >= -one && u <= one && v >= -one && v <= one) {
        return None;
    }
    let half = T::c((res - 1) as f64 * 0.5);
    let col = (u + one) * half;
    let row = (v + one) * half;
    let x0 = col.floor().to_usize().unwrap_or(0).min(res - 2);
    let y0 = row.floor().to_usize().unwrap_or(0).min(res - 2);
    let fx = col - T::c(x0 as f64);
    let fy = row - T::c(y0 as f64);
    let (gx, gy) = (one - fx, one - fy);
    let i00 = y0 * res + x0;
    Some(Corners {
        idx: [i00, i00 + 1, i00 + res, i00 + res + 1],
        w: [gx * gy, fx * gy, gx * fy, fx * fy],
        dw_du: [-gy * half, gy * half, -fy * half, fy * half],
        dw_dv: [-gx * half, -fx * half, gx * half, fx * half],
    })
}

/// Add `scale * plane(corners)` for every channel into `out[..channels]`.
pub fn grid_sample_forward<T: Real>(plane: &[T], channels: usize, res: usize, c: &Corners<T>, scale: T, out: &mut [T]) {
    let area = res * res;
    for (ch, o) in out.iter_mut().enumerate().take(channels) {
        let p = &plane[ch * area..(ch + 1) * area];
        let mut acc = T::zero();
        for k in 0..4 {
            acc += c.w[k] * p[c.idx[k]];
        }
        *o += scale * acc;
    }
}

struct GridSampleFn {
    channels: usize,
    res: usize,
}

impl<T: Real> Function<T> for GridSampleFn {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (plane, uv, gd) = (x[0].data(), x[1].data(), g.data());
        let (ch, area) = (self.channels, self.res * self.res);
        let mut dplane = needs[0].then(|| vec![T::zero(); plane.len()]);
        let mut duv = needs[1].then(|| vec![T::zero(); uv.len()]);
        for (n, gn) in gd.chunks(ch).enumerate() {
            let Some(c) = bilinear_corners(uv[2 * n], uv[2 * n + 1], self.res) else { continue };
            for (cc, &gv) in gn.iter().enumerate() {
                let p = &plane[cc * area..(cc + 1) * area];
                if let Some(dp) = dplane.as_mut() {
                    for k in 0..4 {
                        dp[cc * area + c.idx[k]] += gv * c.w[k];
                    }
                }
                if let Some(d) = duv.as_mut() {
                    for k in 0..4 {
                        d[2 * n] += gv * c.dw_du[k] * p[c.idx[k]];
                        d[2 * n + 1] += gv * c.dw_dv[k] * p[c.idx[k]];
                    }
                }
            }
        }
        Ok(vec![
            dplane.map(|d| Tensor::new(x[0].shape(), d).expect("dplane")),
            duv.map(|d| Tensor::new(x[1].shape(), d).expect("duv")),
        ])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Sample `plane [C, P, P]` at `uv [N, 2]`, giving `[N, C]`.
    pub fn grid_sample(&mut self, plane: Var, uv: Var) -> Result<Var> {
        let (sp, su) = (self.shape(plane).to_vec(), self.shape(uv).to_vec());
        if sp.len() != 3 || sp[1] != sp[2] || sp[1] < 2 || su.len() != 2 || su[1] != 2 {
            return Err(Error::shape("grid_sample", &sp, &su));
        }
        let (channels, res, n) = (sp[0], sp[1], su[0]);
        let mut out = vec![T::zero(); n * channels];
        {
            let (pd, ud) = (self.value(plane).data(), self.value(uv).data());
            for (i, o) in out.chunks_mut(channels.max(1)).enumerate().take(n) {
                if let Some(c) = bilinear_corners(ud[2 * i], ud[2 * i + 1], res) {
                    grid_sample_forward(pd, channels, res, &c, T::one(), o);
                }
            }
        }
        let v = Tensor::new(&[n, channels], out)?;
        self.apply("grid_sample", &[plane, uv], v, GridSampleFn { channels, res })
    }
}
