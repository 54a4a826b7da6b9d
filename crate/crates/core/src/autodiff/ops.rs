//! Differentiable ops.
//!
//! Shape rules (no implicit broadcasting beyond what is listed):
//!
//! | op | inputs | output |
//! |----|--------|--------|
//! | `add`, `sub`, `mul` | `s`, `s` | `s` |
//! | `add_last`, `mul_last` | `(.., c)`, `(c)` | `(.., c)` |
//! | `scale`, `add_scalar`, `silu`, `softplus`, `exp`, `abs`, `sqrt`, `dropout` | `s` | `s` |
//! | `matmul` | `(m, k)`, `(k, n)` | `(m, n)` |
//! | `linear` | `(.., i)`, `(i, o)`, bias `(o)` | `(.., o)` |
//! | `conv2d` | `(h, w, ci)`, `(k, k, ci, co)`, bias `(co)` | `((h+2p-k)/s+1, (w+2p-k)/s+1, co)` |
//! | `dwconv2d` | `(h, w, c)`, `(k, k, c)`, bias `(c)` | `(h, w, c)` (k odd, padding k/2) |
//! | `layer_norm` | `(.., c)`, gamma `(c)`, beta `(c)` | `(.., c)` |
//! | `softmax` | `s`, axis | `s` |
//! | `sum`, `mean` | `s` | `()` |
//! | `reshape` | `s`, `t` with equal element count | `t` |
//! | `permute` | `s`, axis permutation `p` | `s[p]` |
//! | `concat` | equal shapes except `axis` | summed extent on `axis` |
//! | `slice` | `s`, axis, `start..end` | `s` with `end-start` on axis |
//! | `gather` | `s`, flat index list, shape `t` | `t` |
//! | `mix` | `(d, ..)`, `(d)` | `(..)` |

use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{cst, numel, strides, Float, Tensor};

fn same_shape<T: Float>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    Ok(())
}

fn zip_map<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[inline]
pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus_scalar<T: Float>(x: T) -> T {
    if x > cst(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<'t, T: Float> Var<'t, T> {
    fn check_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::Autodiff("operands recorded on different tapes".into()));
        }
        Ok(())
    }

    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.map(f);
        let yv = Arc::new(y.clone());
        self.tape.push(op, y, &[self], move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(yv.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            Ok(vec![Some(Tensor::new(g.shape().to_vec(), data)?)])
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other)?;
        same_shape("add", &self, &other)?;
        let y = zip_map(&self.value(), &other.value(), |a, b| a + b);
        self.tape.push("add", y, &[self, other], |g| Ok(vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other)?;
        same_shape("sub", &self, &other)?;
        let y = zip_map(&self.value(), &other.value(), |a, b| a - b);
        self.tape
            .push("sub", y, &[self, other], |g| Ok(vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other)?;
        same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y = zip_map(&a, &b, |x, y| x * y);
        self.tape.push("mul", y, &[self, other], move |g| {
            Ok(vec![Some(zip_map(g, &b, |g, b| g * b)), Some(zip_map(g, &a, |g, a| g * a))])
        })
    }

    pub fn scale(self, s: f64) -> Result<Var<'t, T>> {
        let s: T = cst(s);
        let y = self.value().map(|v| v * s);
        self.tape.push("scale", y, &[self], move |g| Ok(vec![Some(g.map(|v| v * s))]))
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t, T>> {
        let s: T = cst(s);
        let y = self.value().map(|v| v + s);
        self.tape.push("add_scalar", y, &[self], |g| Ok(vec![Some(g.clone())]))
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.scale(-1.0)
    }

    fn last_dim_check(op: &'static str, x: &Var<'t, T>, v: &Var<'t, T>) -> Result<usize> {
        let (sx, sv) = (x.shape(), v.shape());
        match (sx.last(), sv.as_slice()) {
            (Some(&c), [cv]) if c == *cv => Ok(c),
            _ => Err(Error::shape(op, &sx, &sv)),
        }
    }

    /// Adds a per-channel vector along the last axis.
    pub fn add_last(self, v: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&v)?;
        let c = Self::last_dim_check("add_last", &self, &v)?;
        let (x, vv) = (self.value(), v.value());
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for (a, &b) in row.iter_mut().zip(vv.data()) {
                *a += b;
            }
        }
        self.tape.push("add_last", y, &[self, v], move |g| {
            let gv = Tensor::new(vec![c], kernels::col_sums(g.data(), c))?;
            Ok(vec![Some(g.clone()), Some(gv)])
        })
    }

    /// Multiplies by a per-channel vector along the last axis.
    pub fn mul_last(self, v: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&v)?;
        let c = Self::last_dim_check("mul_last", &self, &v)?;
        let (x, vv) = (self.value(), v.value());
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for (a, &b) in row.iter_mut().zip(vv.data()) {
                *a *= b;
            }
        }
        self.tape.push("mul_last", y, &[self, v], move |g| {
            let mut gx = g.clone();
            let mut gv = vec![T::zero(); c];
            for ((grow, xrow), gxrow) in g
                .data()
                .chunks_exact(c)
                .zip(x.data().chunks_exact(c))
                .zip(gx.data_mut().chunks_exact_mut(c))
            {
                for j in 0..c {
                    gv[j] += grow[j] * xrow[j];
                    gxrow[j] = grow[j] * vv.data()[j];
                }
            }
            Ok(vec![Some(gx), Some(Tensor::new(vec![c], gv)?)])
        })
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other)?;
        let (sa, sb) = (self.shape(), other.shape());
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let (a, b) = (self.value(), other.value());
        let y = Tensor::new(vec![m, n], kernels::gemm(a.data(), b.data(), m, k, n))?;
        self.tape.push("matmul", y, &[self, other], move |g| {
            let ga = kernels::gemm_nt(g.data(), b.data(), m, n, k);
            let gb = kernels::gemm_tn(a.data(), g.data(), m, k, n);
            Ok(vec![Some(Tensor::new(vec![m, k], ga)?), Some(Tensor::new(vec![k, n], gb)?)])
        })
    }

    /// `x · w + b` over the last axis of `x`; `w` is `(in, out)`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.check_tape(&w)?;
        let (sx, sw) = (self.shape(), w.shape());
        let (din, dout) = match (sx.last(), sw.as_slice()) {
            (Some(&i), [i2, o]) if i == *i2 => (i, *o),
            _ => return Err(Error::shape("linear", &sx, &sw)),
        };
        if let Some(b) = &b {
            self.check_tape(b)?;
            if b.shape() != [dout] {
                return Err(Error::shape("linear", &sw, &b.shape()));
            }
        }
        let rows = numel(&sx) / din;
        let (x, wv) = (self.value(), w.value());
        let mut y = kernels::gemm(x.data(), wv.data(), rows, din, dout);
        if let Some(b) = &b {
            let bv = b.value();
            for row in y.chunks_exact_mut(dout) {
                for (a, &bb) in row.iter_mut().zip(bv.data()) {
                    *a += bb;
                }
            }
        }
        let mut out_shape = sx.clone();
        *out_shape.last_mut().expect("rank >= 1") = dout;
        let y = Tensor::new(out_shape, y)?;
        let has_bias = b.is_some();
        let mut parents = vec![self, w];
        parents.extend(b);
        self.tape.push("linear", y, &parents, move |g| {
            let gx = kernels::gemm_nt(g.data(), wv.data(), rows, dout, din);
            let gw = kernels::gemm_tn(x.data(), g.data(), rows, din, dout);
            let mut out = vec![
                Some(Tensor::new(sx.clone(), gx)?),
                Some(Tensor::new(vec![din, dout], gw)?),
            ];
            if has_bias {
                out.push(Some(Tensor::new(vec![dout], kernels::col_sums(g.data(), dout))?));
            }
            Ok(out)
        })
    }

    /// Dense 2-D convolution on an `(h, w, cin)` map with zero padding.
    pub fn conv2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.check_tape(&w)?;
        let (sx, sw) = (self.shape(), w.shape());
        let (h, wd, cin, k, cout) = match (sx.as_slice(), sw.as_slice()) {
            ([h, wd, ci], [k, k2, ci2, co]) if ci == ci2 && k == k2 => (*h, *wd, *ci, *k, *co),
            _ => return Err(Error::shape("conv2d", &sx, &sw)),
        };
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if let Some(b) = &b {
            if b.shape() != [cout] {
                return Err(Error::shape("conv2d", &sw, &b.shape()));
            }
        }
        let geom = ConvGeom {
            h,
            w: wd,
            cin,
            k,
            stride,
            pad,
        };
        let (oh, ow, pl) = (geom.out_h(), geom.out_w(), geom.patch_len());
        let x = self.value();
        let wv = w.value();
        let cols = kernels::im2col(x.data(), geom);
        let mut y = kernels::gemm(&cols, wv.data(), oh * ow, pl, cout);
        if let Some(b) = &b {
            let bv = b.value();
            for row in y.chunks_exact_mut(cout) {
                for (a, &bb) in row.iter_mut().zip(bv.data()) {
                    *a += bb;
                }
            }
        }
        let y = Tensor::new(vec![oh, ow, cout], y)?;
        let has_bias = b.is_some();
        let mut parents = vec![self, w];
        parents.extend(b);
        self.tape.push("conv2d", y, &parents, move |g| {
            let gcols = kernels::gemm_nt(g.data(), wv.data(), oh * ow, cout, pl);
            let gx = kernels::col2im(&gcols, geom);
            let gw = kernels::gemm_tn(&cols, g.data(), oh * ow, pl, cout);
            let mut out = vec![
                Some(Tensor::new(vec![h, wd, cin], gx)?),
                Some(Tensor::new(vec![k, k, cin, cout], gw)?),
            ];
            if has_bias {
                out.push(Some(Tensor::new(vec![cout], kernels::col_sums(g.data(), cout))?));
            }
            Ok(out)
        })
    }

    /// Depthwise convolution, stride 1, odd kernel, size-preserving padding.
    pub fn dwconv2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.check_tape(&w)?;
        let (sx, sw) = (self.shape(), w.shape());
        let (h, wd, c, k) = match (sx.as_slice(), sw.as_slice()) {
            ([h, wd, c], [k, k2, c2]) if c == c2 && k == k2 && k % 2 == 1 => (*h, *wd, *c, *k),
            _ => return Err(Error::shape("dwconv2d", &sx, &sw)),
        };
        if let Some(b) = &b {
            if b.shape() != [c] {
                return Err(Error::shape("dwconv2d", &sw, &b.shape()));
            }
        }
        let pad = (k / 2) as isize;
        let x = self.value();
        let wv = w.value();
        let bias = b.as_ref().map(|b| b.value());
        let mut y = vec![T::zero(); h * wd * c];
        parallel::for_each_chunk(&mut y, wd * c, |oy, row| {
            if let Some(bv) = &bias {
                for px in row.chunks_exact_mut(c) {
                    px.copy_from_slice(bv.data());
                }
            }
            for ky in 0..k {
                let iy = oy as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let wrow = &wv.data()[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                    for ox in 0..wd {
                        let ix = ox as isize + kx as isize - pad;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = &x.data()[((iy as usize) * wd + ix as usize) * c..][..c];
                        let dst = &mut row[ox * c..(ox + 1) * c];
                        for ((d, &s), &ww) in dst.iter_mut().zip(src).zip(wrow) {
                            *d += s * ww;
                        }
                    }
                }
            }
        });
        let y = Tensor::new(vec![h, wd, c], y)?;
        let has_bias = b.is_some();
        let mut parents = vec![self, w];
        parents.extend(b);
        self.tape.push("dwconv2d", y, &parents, move |g| {
            let gd = g.data();
            let mut gx = vec![T::zero(); h * wd * c];
            parallel::for_each_chunk(&mut gx, wd * c, |iy, row| {
                for ky in 0..k {
                    let oy = iy as isize - ky as isize + pad;
                    if oy < 0 || oy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let wrow = &wv.data()[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                        for ix in 0..wd {
                            let ox = ix as isize - kx as isize + pad;
                            if ox < 0 || ox >= wd as isize {
                                continue;
                            }
                            let src = &gd[((oy as usize) * wd + ox as usize) * c..][..c];
                            let dst = &mut row[ix * c..(ix + 1) * c];
                            for ((d, &s), &ww) in dst.iter_mut().zip(src).zip(wrow) {
                                *d += s * ww;
                            }
                        }
                    }
                }
            });
            let mut gw = vec![T::zero(); k * k * c];
            parallel::for_each_chunk(&mut gw, c, |tap, acc| {
                let (ky, kx) = (tap / k, tap % k);
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wd {
                        let ix = ox as isize + kx as isize - pad;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let gs = &gd[(oy * wd + ox) * c..][..c];
                        let xs = &x.data()[((iy as usize) * wd + ix as usize) * c..][..c];
                        for ((a, &gg), &xx) in acc.iter_mut().zip(gs).zip(xs) {
                            *a += gg * xx;
                        }
                    }
                }
            });
            let mut out = vec![
                Some(Tensor::new(vec![h, wd, c], gx)?),
                Some(Tensor::new(vec![k, k, c], gw)?),
            ];
            if has_bias {
                out.push(Some(Tensor::new(vec![c], kernels::col_sums(gd, c))?));
            }
            Ok(out)
        })
    }

    /// Normalizes over the last axis: `(x - mean) / sqrt(var + eps)`, then the
    /// optional affine `* gamma + beta`.
    pub fn layer_norm(self, gamma: Option<Var<'t, T>>, beta: Option<Var<'t, T>>, eps: f64) -> Result<Var<'t, T>> {
        let sx = self.shape();
        let c = *sx.last().ok_or_else(|| Error::shape("layer_norm", &sx, &[]))?;
        for p in gamma.iter().chain(beta.iter()) {
            self.check_tape(p)?;
            if p.shape() != [c] {
                return Err(Error::shape("layer_norm", &sx, &p.shape()));
            }
        }
        let x = self.value();
        let gv = gamma.as_ref().map(|g| g.value());
        let bv = beta.as_ref().map(|b| b.value());
        let rows = x.len() / c;
        let eps: T = cst(eps);
        let cn: T = cst(c as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for (r, (xr, hr)) in x.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)).enumerate() {
            let mean = xr.iter().copied().sum::<T>() / cn;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (h, &v) in hr.iter_mut().zip(xr) {
                *h = (v - mean) * is;
            }
        }
        let mut y = xhat.clone();
        for row in y.chunks_exact_mut(c) {
            for j in 0..c {
                if let Some(g) = &gv {
                    row[j] *= g.data()[j];
                }
                if let Some(b) = &bv {
                    row[j] += b.data()[j];
                }
            }
        }
        let y = Tensor::new(sx.clone(), y)?;
        let (has_g, has_b) = (gamma.is_some(), beta.is_some());
        let mut parents = vec![self];
        parents.extend(gamma);
        parents.extend(beta);
        self.tape.push("layer_norm", y, &parents, move |g| {
            let gd = g.data();
            let mut gx = vec![T::zero(); gd.len()];
            let mut ggamma = vec![T::zero(); c];
            let mut gbeta = vec![T::zero(); c];
            let mut gxh = vec![T::zero(); c];
            for r in 0..rows {
                let grow = &gd[r * c..(r + 1) * c];
                let hrow = &xhat[r * c..(r + 1) * c];
                for j in 0..c {
                    ggamma[j] += grow[j] * hrow[j];
                    gbeta[j] += grow[j];
                    gxh[j] = match &gv {
                        Some(gm) => grow[j] * gm.data()[j],
                        None => grow[j],
                    };
                }
                let m1 = gxh.iter().copied().sum::<T>() / cn;
                let m2 = gxh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() / cn;
                let out = &mut gx[r * c..(r + 1) * c];
                for j in 0..c {
                    out[j] = inv_std[r] * (gxh[j] - m1 - hrow[j] * m2);
                }
            }
            let mut out = vec![Some(Tensor::new(sx.clone(), gx)?)];
            if has_g {
                out.push(Some(Tensor::new(vec![c], ggamma)?));
            }
            if has_b {
                out.push(Some(Tensor::new(vec![c], gbeta)?));
            }
            Ok(out)
        })
    }

    pub fn silu(self) -> Result<Var<'t, T>> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn softplus(self) -> Result<Var<'t, T>> {
        self.unary("softplus", softplus_scalar, |x, _| sigmoid(x))
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `|x|`; the derivative at 0 is taken as 0.
    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// `sqrt(x)`; the derivative at 0 is taken as 0.
    pub fn sqrt(self) -> Result<Var<'t, T>> {
        if self.value().data().iter().any(|&v| v < T::zero()) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        self.unary(
            "sqrt",
            |x| x.sqrt(),
            |_, y| if y > T::zero() { cst::<T>(0.5) / y } else { T::zero() },
        )
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let sx = self.shape();
        if axis >= sx.len() {
            return Err(Error::invalid(format!("softmax: axis {axis} out of range for {sx:?}")));
        }
        let n = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let outer: usize = sx[..axis].iter().product();
        let x = self.value();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                // Evaluated in f64 so each output carries one rounding.
                let m = (0..n).map(|j| x.data()[idx(j)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = (0..n).map(|j| (x.data()[idx(j)].as_f64() - m).exp()).collect();
                let s: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    y[idx(j)] = T::from_f64_lossy(ej / s);
                }
            }
        }
        let y = Tensor::new(sx.clone(), y)?;
        let yv = y.clone();
        self.tape.push("softmax", y, &[self], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: T = (0..n).map(|j| g.data()[idx(j)] * yv.data()[idx(j)]).sum();
                    for j in 0..n {
                        gx[idx(j)] = yv.data()[idx(j)] * (g.data()[idx(j)] - dot);
                    }
                }
            }
            Ok(vec![Some(Tensor::new(sx.clone(), gx)?)])
        })
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let y = Tensor::scalar(x.sum());
        self.tape
            .push("sum", y, &[self], move |g| Ok(vec![Some(Tensor::full(&shape, g.item()))]))
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let n: T = cst(x.len() as f64);
        let y = Tensor::scalar(x.sum() / n);
        self.tape
            .push("mean", y, &[self], move |g| Ok(vec![Some(Tensor::full(&shape, g.item() / n))]))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let sx = self.shape();
        if numel(&sx) != numel(shape) || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", &sx, shape));
        }
        let y = (*self.value()).clone().reshaped(shape.to_vec())?;
        self.tape.push("reshape", y, &[self], move |g| Ok(vec![Some(g.clone().reshaped(sx.clone())?)]))
    }

    /// Output element `i` reads input element `index[i]`; the backward pass
    /// scatter-adds. Pixel shuffles, traversals and permutations are all
    /// expressed through this.
    pub fn gather(self, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let sx = x.shape().to_vec();
        if numel(shape) != index.len() || index.iter().any(|&i| i >= x.len()) {
            return Err(Error::shape("gather", &sx, shape));
        }
        let data = index.iter().map(|&i| x.data()[i]).collect();
        let y = Tensor::new(shape.to_vec(), data)?;
        self.tape.push("gather", y, &[self], move |g| {
            let mut gx = Tensor::zeros(&sx);
            let gxd = gx.data_mut();
            for (&i, &gv) in index.iter().zip(g.data()) {
                gxd[i] += gv;
            }
            Ok(vec![Some(gx)])
        })
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let sx = self.shape();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(format!("permute: {axes:?} is not a permutation of rank {}", sx.len())));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| sx[a]).collect();
        let in_strides = strides(&sx);
        let n = numel(&sx);
        let mut index = Vec::with_capacity(n);
        let mut coord = vec![0usize; sx.len()];
        for _ in 0..n {
            index.push(coord.iter().zip(axes).map(|(&c, &a)| c * in_strides[a]).sum());
            for d in (0..coord.len()).rev() {
                coord[d] += 1;
                if coord[d] < out_shape[d] {
                    break;
                }
                coord[d] = 0;
            }
        }
        self.gather(Arc::new(index), &out_shape)
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let sx = self.shape();
        if axis >= sx.len() || start >= end || end > sx[axis] {
            return Err(Error::invalid(format!("slice: axis {axis} range {start}..{end} invalid for {sx:?}")));
        }
        let inner: usize = sx[axis + 1..].iter().product();
        let outer: usize = sx[..axis].iter().product();
        let mut index = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            for j in start..end {
                let base = (o * sx[axis] + j) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut shape = sx.clone();
        shape[axis] = end - start;
        self.gather(Arc::new(index), &shape)
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let s0 = first.shape();
        if axis >= s0.len() {
            return Err(Error::invalid(format!("concat: axis {axis} out of range for {s0:?}")));
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        for (p, s) in parts.iter().zip(&shapes) {
            first.check_tape(p)?;
            let ok = s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &s0, s));
            }
        }
        let inner: usize = s0[axis + 1..].iter().product();
        let outer: usize = s0[..axis].iter().product();
        let extents: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = extents.iter().sum();
        let values: Vec<Arc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[axis] = total;
        let y = Tensor::new(shape, data)?;
        first.tape.push("concat", y, parts, move |g| {
            let mut outs: Vec<Vec<T>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (o, &e) in outs.iter_mut().zip(&extents) {
                    o.extend_from_slice(&g.data()[pos..pos + e * inner]);
                    pos += e * inner;
                }
            }
            outs.into_iter()
                .zip(shapes)
                .map(|(d, s)| Tensor::new(s, d).map(Some))
                .collect()
        })
    }

    /// Weighted sum over the leading axis: `Σ_d w[d] · x[d, ..]`.
    pub fn mix(self, w: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&w)?;
        let (sx, sw) = (self.shape(), w.shape());
        let d = match (sx.first(), sw.as_slice()) {
            (Some(&d), [d2]) if d == *d2 && sx.len() >= 2 => d,
            _ => return Err(Error::shape("mix", &sx, &sw)),
        };
        let inner = numel(&sx[1..]);
        let (x, wv) = (self.value(), w.value());
        // Pairwise over d, so equal weights summing to one reproduce a
        // repeated slab exactly.
        let mut slabs: Vec<Vec<T>> = (0..d)
            .map(|k| {
                let wk = wv.data()[k];
                x.data()[k * inner..(k + 1) * inner].iter().map(|&b| wk * b).collect()
            })
            .collect();
        while slabs.len() > 1 {
            slabs = slabs
                .chunks_mut(2)
                .map(|pair| match pair {
                    [a, b] => a.iter().zip(b.iter()).map(|(&u, &v)| u + v).collect(),
                    [a] => std::mem::take(a),
                    _ => unreachable!(),
                })
                .collect();
        }
        let y = Tensor::new(sx[1..].to_vec(), slabs.pop().unwrap_or_default())?;
        self.tape.push("mix", y, &[self, w], move |g| {
            let mut gx = Vec::with_capacity(d * inner);
            let mut gw = Vec::with_capacity(d);
            for k in 0..d {
                let wk = wv.data()[k];
                gx.extend(g.data().iter().map(|&gv| gv * wk));
                gw.push(g.data().iter().zip(&x.data()[k * inner..(k + 1) * inner]).map(|(&a, &b)| a * b).sum());
            }
            Ok(vec![Some(Tensor::new(sx.clone(), gx)?), Some(Tensor::new(vec![d], gw)?)])
        })
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, this is the
    /// identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(self, rate: f64, training: bool, rng: &mut R) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self);
        }
        let keep: T = cst(1.0 / (1.0 - rate));
        let x = self.value();
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let y = Tensor::new(x.shape().to_vec(), x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect())?;
        self.tape.push("dropout", y, &[self], move |g| {
            let data = g.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            Ok(vec![Some(Tensor::new(g.shape().to_vec(), data)?)])
        })
    }
}

impl<T: Float> Tape<T> {
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        Var::concat(parts, axis)
    }
}
