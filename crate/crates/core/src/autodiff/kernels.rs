//! Raw slice kernels behind the differentiable ops.

use crate::parallel;
use crate::tensor::Float;

const ROW_BLOCK: usize = 16;

/// `c[m,n] = a[m,k] · b[k,n]`.
pub fn gemm<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    parallel::for_each_chunk(&mut c, ROW_BLOCK * n, |blk, rows| {
        let r0 = blk * ROW_BLOCK;
        for (ri, crow) in rows.chunks_exact_mut(n).enumerate() {
            let arow = &a[(r0 + ri) * k..(r0 + ri + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                if av == T::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    });
    c
}

pub fn transpose<T: Float>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `aᵀ · g` for `a[m,k]`, `g[m,n]`, giving `[k,n]`.
pub fn gemm_tn<T: Float>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let at = transpose(a, m, k);
    gemm(&at, g, k, m, n)
}

/// `g · bᵀ` for `g[m,n]`, `b[k,n]`, giving `[m,k]`.
pub fn gemm_nt<T: Float>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let bt = transpose(b, k, n);
    gemm(g, &bt, m, n, k)
}

/// Column sums of a `[rows, cols]` matrix.
pub fn col_sums<T: Float>(a: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for row in a.chunks_exact(cols) {
        for (acc, &v) in s.iter_mut().zip(row) {
            *acc += v;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// Unfolds an `(h, w, cin)` image into `(out_h·out_w, k·k·cin)` patches,
/// zero-filled outside the image. Patch columns are ordered `(ky, kx, ci)`.
pub fn im2col<T: Float>(x: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow, pl) = (g.out_h(), g.out_w(), g.patch_len());
    let mut cols = vec![T::zero(); oh * ow * pl];
    parallel::for_each_chunk(&mut cols, ow * pl, |oy, row| {
        for ox in 0..ow {
            let patch = &mut row[ox * pl..(ox + 1) * pl];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = ((iy as usize) * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.k + kx) * g.cin;
                    patch[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub fn col2im<T: Float>(cols: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow, pl) = (g.out_h(), g.out_w(), g.patch_len());
    let mut x = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..oh {
        for ox in 0..ow {
            let patch = &cols[(oy * ow + ox) * pl..(oy * ow + ox + 1) * pl];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = ((iy as usize) * g.w + ix as usize) * g.cin;
                    let src = (ky * g.k + kx) * g.cin;
                    for c in 0..g.cin {
                        x[dst + c] += patch[src + c];
                    }
                }
            }
        }
    }
    x
}
