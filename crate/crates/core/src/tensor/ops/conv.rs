//! 2D convolution and stride-2 transposed convolution via im2col + GEMM.
//! Images are `[B, C, H, W]`; conv weights `[Cout, Cin, k, k]`, transposed
//! conv weights `[Cin, Cout, k, k]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{Function, Graph, Tensor, Var};

/// Geometry of a convolution from an `h x w` image to an `ho x wo` map.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.b * self.ho * self.wo
    }

    /// Output indices `lo..hi` whose tap `t` lands inside `0..extent`.
    #[inline]
    fn valid(&self, t: usize, extent: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if t >= p { 0 } else { (p - t).div_ceil(s) };
        let hi = if extent + p > t { ((extent + p - t - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// `[B, C, H, W]` image to `[C*k*k, B*ho*wo]` patch matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.cols();
    let plane = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.rows() * n];
    for c in 0..g.c {
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid(ky, g.h, g.ho);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid(kx, g.w, g.wo);
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for b in 0..g.b {
                    let src = &x[(b * g.c + c) * g.h * g.w..(b * g.c + c + 1) * g.h * g.w];
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let d0 = b * plane + oy * g.wo;
                        let drow = &mut dst[d0 + xlo..d0 + xhi];
                        let s0 = iy * g.w + xlo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            drow.copy_from_slice(&src[s0..s0 + drow.len()]);
                        } else {
                            for (i, d) in drow.iter_mut().enumerate() {
                                *d = src[s0 + i * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into an image.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.cols();
    let plane = g.ho * g.wo;
    let mut x = vec![T::zero(); g.b * g.c * g.h * g.w];
    for c in 0..g.c {
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid(ky, g.h, g.ho);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid(kx, g.w, g.wo);
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for b in 0..g.b {
                    let base = (b * g.c + c) * g.h * g.w;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let c0 = b * plane + oy * g.wo;
                        let x0 = base + iy * g.w + xlo * g.stride + kx - g.pad;
                        for (i, &v) in src[c0 + xlo..c0 + xhi].iter().enumerate() {
                            x[x0 + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[B, C, L]` to `[C, B*L]`.
fn to_channel_major<T: Real>(x: &[T], b: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * b * l + bi * l..ci * b * l + (bi + 1) * l]
                .copy_from_slice(&x[(bi * c + ci) * l..(bi * c + ci + 1) * l]);
        }
    }
    out
}

/// `[C, B*L]` to `[B, C, L]`.
fn from_channel_major<T: Real>(x: &[T], b: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                .copy_from_slice(&x[ci * b * l + bi * l..ci * b * l + (bi + 1) * l]);
        }
    }
    out
}

fn bias_grad<T: Real>(g: &[T], b: usize, c: usize, l: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, acc) in db.iter_mut().enumerate() {
            *acc += g[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[c], db).expect("bias")
}

struct Conv2dFn {
    geom: ConvGeom,
    cout: usize,
}

impl<T: Real> Function<T> for Conv2dFn {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = &self.geom;
        let (rows, n, l) = (geo.rows(), geo.cols(), geo.ho * geo.wo);
        let gp = to_channel_major(g.data(), geo.b, self.cout, l);
        let dw = needs[1].then(|| {
            let cols = im2col(x[0].data(), geo);
            let mut dw = Tensor::zeros(x[1].shape());
            gemm(
                self.cout,
                n,
                rows,
                T::one(),
                MatRef::row_major(&gp, n),
                MatRef::transposed(&cols, n),
                T::zero(),
                dw.data_mut(),
                rows,
                1,
            );
            dw
        });
        let dx = needs[0].then(|| {
            let mut dcols = vec![T::zero(); rows * n];
            gemm(
                rows,
                self.cout,
                n,
                T::one(),
                MatRef::transposed(x[1].data(), rows),
                MatRef::row_major(&gp, n),
                T::zero(),
                &mut dcols,
                n,
                1,
            );
            Tensor::new(x[0].shape(), col2im(&dcols, geo)).expect("dx")
        });
        let db = (x.len() > 2 && needs[2]).then(|| bias_grad(g.data(), geo.b, self.cout, l));
        let mut out = vec![dx, dw];
        if x.len() > 2 {
            out.push(db);
        }
        Ok(out)
    }
}

struct ConvTransposeFn {
    /// Geometry of the adjoint convolution (output image -> input map).
    geom: ConvGeom,
    cin: usize,
}

impl<T: Real> Function<T> for ConvTransposeFn {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = &self.geom;
        let (rows, n, l) = (geo.rows(), geo.cols(), geo.ho * geo.wo);
        let gcols = im2col(g.data(), geo);
        let dx = needs[0].then(|| {
            let mut dxp = vec![T::zero(); self.cin * n];
            gemm(
                self.cin,
                rows,
                n,
                T::one(),
                MatRef::row_major(x[1].data(), rows),
                MatRef::row_major(&gcols, n),
                T::zero(),
                &mut dxp,
                n,
                1,
            );
            Tensor::new(x[0].shape(), from_channel_major(&dxp, geo.b, self.cin, l)).expect("dx")
        });
        let dw = needs[1].then(|| {
            let xp = to_channel_major(x[0].data(), geo.b, self.cin, l);
            let mut dw = Tensor::zeros(x[1].shape());
            gemm(
                self.cin,
                n,
                rows,
                T::one(),
                MatRef::row_major(&xp, n),
                MatRef::transposed(&gcols, n),
                T::zero(),
                dw.data_mut(),
                rows,
                1,
            );
            dw
        });
        let db = (x.len() > 2 && needs[2]).then(|| bias_grad(g.data(), geo.b, geo.c, geo.h * geo.w));
        let mut out = vec![dx, dw];
        if x.len() > 2 {
            out.push(db);
        }
        Ok(out)
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Zero-padded 2D convolution.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let bad = || Error::shape("conv2d", &sx, &sw);
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || stride == 0 {
            return Err(bad());
        }
        let (b, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(bad());
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(Error::shape("conv2d", &sw, self.shape(bv)));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { b, c: cin, h, w: wd, k, stride, pad, ho, wo };
        let (rows, n, l) = (geom.rows(), geom.cols(), ho * wo);
        let cols = im2col(self.value(x).data(), &geom);
        let mut tmp = vec![T::zero(); cout * n];
        gemm(
            cout,
            rows,
            n,
            T::one(),
            MatRef::row_major(self.value(w).data(), rows),
            MatRef::row_major(&cols, n),
            T::zero(),
            &mut tmp,
            n,
            1,
        );
        let mut out = from_channel_major(&tmp, b, cout, l);
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for (i, v) in out.iter_mut().enumerate() {
                *v += bd[(i / l) % cout];
            }
        }
        let value = Tensor::new(&[b, cout, ho, wo], out)?;
        let inputs: Vec<Var> = match bias {
            Some(bv) => vec![x, w, bv],
            None => vec![x, w],
        };
        self.apply("conv2d", &inputs, value, Conv2dFn { geom, cout })
    }

    /// Transposed convolution; output size `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let bad = || Error::shape("conv_transpose2d", &sx, &sw);
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sx[1] || sw[2] != sw[3] || stride == 0 {
            return Err(bad());
        }
        let (b, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[1], sw[2]);
        if (h - 1) * stride + k < 2 * pad + 1 {
            return Err(bad());
        }
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (wd - 1) * stride + k - 2 * pad;
        if (ho + 2 * pad - k) / stride + 1 != h || (wo + 2 * pad - k) / stride + 1 != wd {
            return Err(bad());
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(Error::shape("conv_transpose2d", &sw, self.shape(bv)));
            }
        }
        let geom = ConvGeom { b, c: cout, h: ho, w: wo, k, stride, pad, ho: h, wo: wd };
        let (rows, n, l) = (geom.rows(), geom.cols(), h * wd);
        let xp = to_channel_major(self.value(x).data(), b, cin, l);
        let mut cols = vec![T::zero(); rows * n];
        gemm(
            rows,
            cin,
            n,
            T::one(),
            MatRef::transposed(self.value(w).data(), rows),
            MatRef::row_major(&xp, n),
            T::zero(),
            &mut cols,
            n,
            1,
        );
        let mut out = col2im(&cols, &geom);
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            let lo = ho * wo;
            for (i, v) in out.iter_mut().enumerate() {
                *v += bd[(i / lo) % cout];
            }
        }
        let value = Tensor::new(&[b, cout, ho, wo], out)?;
        let inputs: Vec<Var> = match bias {
            Some(bv) => vec![x, w, bv],
            None => vec![x, w],
        };
        self.apply("conv_transpose2d", &inputs, value, ConvTransposeFn { geom, cin })
    }
}
