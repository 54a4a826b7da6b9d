//! Catmull-Rom bicubic upscaling (`a = −0.5`), edge-clamped, half-pixel
//! aligned: output index `o` samples source coordinate `(o + ½)/s − ½`.
//!
//! Only two sub-pixel phases occur per axis for `s = 2`, so the weights are
//! exact dyadic rationals:
//!
//! | phase | taps `i−2, i−1, i, i+1` (relative to `⌊u⌋ + 1`) |
//! |-------|------------------------------------------------|
//! | `u = k − ¼` | `−0.0234375, 0.2265625, 0.8671875, −0.0703125` |
//! | `u = k + ¼` | `−0.0703125, 0.8671875, 0.2265625, −0.0234375` |
//!
//! `s = 4` uses offsets `±⅛, ±⅜`, also dyadic. Accumulation runs in `f64`
//! and each output is rounded once, so a constant image maps to itself
//! exactly.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const CUBIC_A: f64 = -0.5;

pub fn cubic_kernel(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four source indices (clamped) and weights for one output index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

pub fn taps(n_in: usize, scale: usize) -> Vec<Taps> {
    (0..n_in * scale)
        .map(|o| {
            let u = (o as f64 + 0.5) / scale as f64 - 0.5;
            let base = u.floor();
            let mut index = [0usize; 4];
            let mut weight = [0.0; 4];
            for (k, off) in (-1i64..=2).enumerate() {
                let src = base as i64 + off;
                index[k] = src.clamp(0, n_in as i64 - 1) as usize;
                weight[k] = cubic_kernel(u - src as f64);
            }
            Taps { index, weight }
        })
        .collect()
}

fn check_scale(scale: usize) -> Result<()> {
    if scale == 2 || scale == 4 {
        Ok(())
    } else {
        Err(Error::invalid(format!("scale {scale} not supported; expected 2 or 4")))
    }
}

fn dims<T: Float>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[h, w, c] => Ok((h, w, c)),
        s => Err(Error::shape("bicubic", s, &[0, 0, 1])),
    }
}

/// `(h, w, c)` → `(h·s, w·s, c)`.
pub fn bicubic_upscale<T: Float>(img: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    check_scale(scale)?;
    let (h, w, c) = dims(img)?;
    let (hh, ww) = (h * scale, w * scale);
    let (ty, tx) = (taps(h, scale), taps(w, scale));
    let src = img.data();
    let mut rows = vec![0.0f64; h * ww * c];
    for y in 0..h {
        for (x, t) in tx.iter().enumerate() {
            for k in 0..c {
                rows[(y * ww + x) * c + k] =
                    (0..4).map(|j| t.weight[j] * src[(y * w + t.index[j]) * c + k].as_f64()).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(hh * ww * c);
    for t in &ty {
        for x in 0..ww {
            for k in 0..c {
                let v: f64 = (0..4).map(|i| t.weight[i] * rows[(t.index[i] * ww + x) * c + k]).sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Tensor::new(vec![hh, ww, c], out)
}

/// Transpose of [`bicubic_upscale`]: `(h·s, w·s, c)` → `(h, w, c)`.
pub fn bicubic_adjoint<T: Float>(g: &Tensor<T>, h: usize, w: usize, scale: usize) -> Result<Tensor<T>> {
    check_scale(scale)?;
    let (hh, ww, c) = dims(g)?;
    if hh != h * scale || ww != w * scale {
        return Err(Error::shape("bicubic_adjoint", &[hh, ww, c], &[h * scale, w * scale, c]));
    }
    let (ty, tx) = (taps(h, scale), taps(w, scale));
    let mut rows = vec![0.0f64; h * ww * c];
    for (yy, t) in ty.iter().enumerate() {
        for x in 0..ww {
            for k in 0..c {
                let gv = g.data()[(yy * ww + x) * c + k].as_f64();
                for i in 0..4 {
                    rows[(t.index[i] * ww + x) * c + k] += t.weight[i] * gv;
                }
            }
        }
    }
    let mut out = vec![0.0f64; h * w * c];
    for y in 0..h {
        for (x, t) in tx.iter().enumerate() {
            for k in 0..c {
                let gv = rows[(y * ww + x) * c + k];
                for j in 0..4 {
                    out[(y * w + t.index[j]) * c + k] += t.weight[j] * gv;
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], out.into_iter().map(T::from_f64_lossy).collect())
}
