//! PSNR and single-scale SSIM on `(H, W, 1)` images with peak 1.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same<T: Float>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak²/MSE)`; identical images give `+∞`.
pub fn psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..k).map(|j| g[j] * x[y * w + xo + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..k).map(|i| g[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM over every valid 11×11 window position.
pub fn ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same("ssim", a, b)?;
    let &[h, w, 1] = a.shape() else {
        return Err(Error::shape("ssim", a.shape(), &[0, 0, 1]));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim: {h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let av: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mu_a = filter_valid(&av, h, w, &g);
    let mu_b = filter_valid(&bv, h, w, &g);
    let e_aa = filter_valid(&prod(&av, &av), h, w, &g);
    let e_bb = filter_valid(&prod(&bv, &bv), h, w, &g);
    let e_ab = filter_valid(&prod(&av, &bv), h, w, &g);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}
