use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{Function, Graph, Tensor, Var};

#[derive(Clone, Copy)]
struct MatmulGeom {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
}

impl MatmulGeom {
    /// (row stride, col stride) of op(a) as an `m x k` view.
    fn a_strides(&self) -> (usize, usize) {
        if self.ta {
            (1, self.m)
        } else {
            (self.k, 1)
        }
    }

    fn b_strides(&self) -> (usize, usize) {
        if self.tb {
            (1, self.k)
        } else {
            (self.n, 1)
        }
    }
}

struct MatmulFn(MatmulGeom);

impl<T: Real> Function<T> for MatmulFn {
    fn backward(
        &self,
        x: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = self.0;
        let MatmulGeom { batch, m, k, n, ta, tb } = geo;
        let (rsa, csa) = geo.a_strides();
        let (rsb, csb) = geo.b_strides();
        let (ad, bd, gd) = (x[0].data(), x[1].data(), g.data());
        let da = needs[0].then(|| {
            let mut da = Tensor::zeros(x[0].shape());
            let (rsc, csc) = if ta { (1, m) } else { (k, 1) };
            for b in 0..batch {
                gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    MatRef::row_major(&gd[b * m * n..(b + 1) * m * n], n),
                    MatRef { data: &bd[b * k * n..(b + 1) * k * n], rs: csb, cs: rsb },
                    T::zero(),
                    &mut da.data_mut()[b * m * k..(b + 1) * m * k],
                    rsc,
                    csc,
                );
            }
            da
        });
        let db = needs[1].then(|| {
            let mut db = Tensor::zeros(x[1].shape());
            let (rsc, csc) = if tb { (1, k) } else { (n, 1) };
            for b in 0..batch {
                gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    MatRef { data: &ad[b * m * k..(b + 1) * m * k], rs: csa, cs: rsa },
                    MatRef::row_major(&gd[b * m * n..(b + 1) * m * n], n),
                    T::zero(),
                    &mut db.data_mut()[b * k * n..(b + 1) * k * n],
                    rsc,
                    csc,
                );
            }
            db
        });
        Ok(vec![da, db])
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// `a @ b` for `[m, k] x [k, n]` or batched `[B, m, k] x [B, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) @ op(b)` where `op` transposes the last two axes when its flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("matmul", &sa, &sb);
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(bad());
        }
        let r = sa.len();
        let batch = if r == 3 { sa[0] } else { 1 };
        if r == 3 && sb[0] != batch {
            return Err(bad());
        }
        let (m, ka) = if ta { (sa[r - 1], sa[r - 2]) } else { (sa[r - 2], sa[r - 1]) };
        let (kb, n) = if tb { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if ka != kb {
            return Err(bad());
        }
        let geo = MatmulGeom { batch, m, k: ka, n, ta, tb };
        let (rsa, csa) = geo.a_strides();
        let (rsb, csb) = geo.b_strides();
        let mut out_shape = if r == 3 { vec![batch] } else { Vec::new() };
        out_shape.extend_from_slice(&[m, n]);
        let mut out = Tensor::zeros(&out_shape);
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for bi in 0..batch {
                gemm(
                    m,
                    ka,
                    n,
                    T::one(),
                    MatRef { data: &ad[bi * m * ka..(bi + 1) * m * ka], rs: rsa, cs: csa },
                    MatRef { data: &bd[bi * ka * n..(bi + 1) * ka * n], rs: rsb, cs: csb },
                    T::zero(),
                    &mut out.data_mut()[bi * m * n..(bi + 1) * m * n],
                    n,
                    1,
                );
            }
        }
        self.apply("matmul", &[a, b], out, MatmulFn(geo))
    }
}
