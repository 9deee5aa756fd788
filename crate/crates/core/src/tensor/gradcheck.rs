//! Central finite differences against reverse-mode gradients, in `f64`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use super::{ParamSet, Tensor};
use crate::error::Result;

/// Largest relative error seen and where.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare `analytic` against central differences of `loss` for up to
/// `per_param` randomly chosen coordinates of each trainable parameter
/// (every coordinate when `per_param` is `None`).
pub fn fd_check<R: Rng>(
    params: &ParamSet<f64>,
    analytic: &BTreeMap<String, Tensor<f64>>,
    eps: f64,
    per_param: Option<usize>,
    rng: &mut R,
    mut loss: impl FnMut(&ParamSet<f64>) -> Result<f64>,
) -> Result<FdReport> {
    let mut report = FdReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut work = params.clone();
    let names: Vec<String> = params.iter().filter(|(_, p)| p.trainable).map(|(k, _)| k.to_string()).collect();
    for name in names {
        let n = params.tensor(&name)?.numel();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => index::sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let g = analytic.get(&name).ok_or_else(|| crate::Error::MissingGradient(name.clone()))?;
        for i in coords {
            let orig = params.tensor(&name)?.data()[i];
            work.get_mut(&name).expect("cloned").tensor.data_mut()[i] = orig + eps;
            let up = loss(&work)?;
            work.get_mut(&name).expect("cloned").tensor.data_mut()[i] = orig - eps;
            let down = loss(&work)?;
            work.get_mut(&name).expect("cloned").tensor.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = rel_error(fd, g.data()[i], 1e-8);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}
