//! Image-quality scores on `[C, H, W]` latents with values in `[-1, 1]`.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Dynamic range of latent values.
pub const PEAK: f64 = 2.0;
/// Reported in place of an infinite PSNR.
pub const PSNR_IDENTICAL: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;

fn check<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::shape("metric", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() || a.numel() == 0 {
        return Err(Error::shape("mse", a.shape(), b.shape()));
    }
    let ss: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(ss / a.numel() as f64)
}

/// `10 log10(PEAK^2 / mse)`, or [`PSNR_IDENTICAL`] when the inputs match.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check(a, b)?;
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    let db: f64 = 10.0 * Float::log10(PEAK * PEAK / m);
    Ok(db.min(PSNR_IDENTICAL))
}

/// Mean SSIM over every valid 7x7 window of every channel, with uniform
/// window weights and `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`. Grids smaller
/// than the window use one window covering the whole channel.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check(a, b)?;
    let s = a.shape();
    let (ch, h, w) = (s[0], s[1], s[2]);
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let c1 = (0.01 * PEAK) * (0.01 * PEAK);
    let c2 = (0.03 * PEAK) * (0.03 * PEAK);
    let (ad, bd) = (a.data(), b.data());
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let base = c * h * w;
        for i in 0..=h - wh {
            for j in 0..=w - ww {
                let at = |d: &[T], y: usize, x: usize| d[base + (i + y) * w + j + x].as_f64();
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..wh {
                    for x in 0..ww {
                        ma += at(ad, y, x);
                        mb += at(bd, y, x);
                    }
                }
                ma /= n;
                mb /= n;
                let cov = |p: &[T], q: &[T], mp: f64, mq: f64| {
                    let mut acc = 0.0;
                    for y in 0..wh {
                        for x in 0..ww {
                            acc += (at(p, y, x) - mp) * (at(q, y, x) - mq);
                        }
                    }
                    acc / n
                };
                let (va, vb, vab) = (cov(ad, ad, ma, ma), cov(bd, bd, mb, mb), cov(ad, bd, ma, mb));
                total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("ssim windows"));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_latents_hit_the_sentinels() {
        let a = Tensor::<f64>::from_fn(&[4, 9, 9], |i| ((i * 37 % 11) as f64 / 5.5) - 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn psnr_of_known_error() {
        let a = Tensor::<f64>::zeros(&[1, 2, 2]);
        let b = Tensor::<f64>::full(&[1, 2, 2], 0.2);
        // mse 0.04 -> 10 log10(4 / 0.04) = 20 dB
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
    }
}
