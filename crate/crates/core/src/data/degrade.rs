//! Low-resolution synthesis by central k-space truncation.
//!
//! The `H×W` spectrum is cropped to frequencies `−h/2 .. h/2−1` (and likewise
//! for `w`) with `h = H/s`, inverse transformed at the small size, scaled by
//! `1/s²` so that a constant image keeps its value, and reduced to its real
//! part.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// In-place 2-D transform of a row-major `rows×cols` buffer.
pub fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (fr, fc) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for row in data.chunks_exact_mut(cols) {
        fr.process(row);
    }
    let mut col = vec![Complex64::default(); rows];
    for x in 0..cols {
        for y in 0..rows {
            col[y] = data[y * cols + x];
        }
        fc.process(&mut col);
        for y in 0..rows {
            data[y * cols + x] = col[y];
        }
    }
}

/// Signed frequency for small-grid index `k` of an `n`-point centered crop.
fn centered(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn check(hr_shape: &[usize], scale: usize) -> Result<(usize, usize)> {
    let [hh, ww, 1] = *hr_shape else {
        return Err(Error::shape("degrade_kspace", hr_shape, &[0, 0, 1]));
    };
    if scale == 0 || hh % scale != 0 || ww % scale != 0 {
        return Err(Error::invalid(format!("degrade_kspace: {hh}x{ww} not divisible by scale {scale}")));
    }
    Ok((hh, ww))
}

/// Unclipped complex low-resolution image, `(H/s)·(W/s)` values row-major.
/// `noise_std > 0` adds complex Gaussian noise to the retained coefficients,
/// relative to the image-domain scale.
pub fn degrade_kspace_complex<T: Float>(hr: &Tensor<T>, scale: usize, noise_std: f64, seed: u64) -> Result<Vec<Complex64>> {
    let (hh, ww) = check(hr.shape(), scale)?;
    let (h, w) = (hh / scale, ww / scale);
    let mut spec: Vec<Complex64> = hr.data().iter().map(|v| Complex64::new(v.as_f64(), 0.0)).collect();
    fft2(&mut spec, hh, ww, false);
    let s2 = (scale * scale) as f64;
    let mut small = vec![Complex64::default(); h * w];
    for ky in 0..h {
        let fy = centered(ky, h).rem_euclid(hh as i64) as usize;
        for kx in 0..w {
            let fx = centered(kx, w).rem_euclid(ww as i64) as usize;
            small[ky * w + kx] = spec[fy * ww + fx] / s2;
        }
    }
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std * ((h * w) as f64).sqrt())
            .map_err(|e| Error::invalid(format!("kspace noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut small {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    fft2(&mut small, h, w, true);
    let norm = (h * w) as f64;
    Ok(small.into_iter().map(|v| v / norm).collect())
}

/// `(H, W, 1)` → `(H/s, W/s, 1)`, clipped to `[0, 1]`.
pub fn degrade_kspace<T: Float>(hr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    degrade_kspace_noisy(hr, scale, 0.0, 0)
}

pub fn degrade_kspace_noisy<T: Float>(hr: &Tensor<T>, scale: usize, noise_std: f64, seed: u64) -> Result<Tensor<T>> {
    let z = degrade_kspace_complex(hr, scale, noise_std, seed)?;
    let (h, w) = (hr.shape()[0] / scale, hr.shape()[1] / scale);
    Tensor::new(vec![h, w, 1], z.iter().map(|v| T::from_f64_lossy(v.re.clamp(0.0, 1.0))).collect())
}
