//! Parameterized layers and the fixed rearrangements between them.

use std::sync::Arc;

use super::params::{Builder, Ctx, Init, ParamId};
use crate::autodiff::{Var, LN_EPS};
use crate::data::{bicubic_adjoint, bicubic_upscale};
use crate::error::{Error, Result};
use crate::tensor::Float;

/// Gather index of a pixel shuffle: input `(h, w, c·r²)`, output
/// `(h·r, w·r, c)`, with input channel `c·r² + dy·r + dx` landing at
/// `(y·r + dy, x·r + dx, c)`.
pub fn pixel_shuffle_index(h: usize, w: usize, c: usize, r: usize) -> Vec<usize> {
    let cin = c * r * r;
    let (hh, ww) = (h * r, w * r);
    let mut index = Vec::with_capacity(hh * ww * c);
    for oy in 0..hh {
        for ox in 0..ww {
            let (y, dy, x, dx) = (oy / r, oy % r, ox / r, ox % r);
            for k in 0..c {
                index.push((y * w + x) * cin + k * r * r + dy * r + dx);
            }
        }
    }
    index
}

/// Inverse rearrangement: `(h·r, w·r, c)` → `(h, w, c·r²)`.
pub fn pixel_unshuffle_index(hh: usize, ww: usize, c: usize, r: usize) -> Vec<usize> {
    let (h, w) = (hh / r, ww / r);
    let mut index = Vec::with_capacity(hh * ww * c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                for dy in 0..r {
                    for dx in 0..r {
                        index.push(((y * r + dy) * ww + x * r + dx) * c + k);
                    }
                }
            }
        }
    }
    index
}

fn dims3<T: Float>(op: &'static str, x: &Var<'_, T>) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape(op, s, &[0, 0, 0])),
    }
}

pub fn pixel_shuffle<'t, T: Float>(x: Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let (h, w, cin) = dims3("pixel_shuffle", &x)?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(Error::invalid(format!("pixel_shuffle: {cin} channels not divisible by {r}²")));
    }
    let c = cin / (r * r);
    x.gather(Arc::new(pixel_shuffle_index(h, w, c, r)), &[h * r, w * r, c])
}

pub fn pixel_unshuffle<'t, T: Float>(x: Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let (hh, ww, c) = dims3("pixel_unshuffle", &x)?;
    if r == 0 || hh % r != 0 || ww % r != 0 {
        return Err(Error::invalid(format!("pixel_unshuffle: {hh}x{ww} not divisible by {r}")));
    }
    x.gather(Arc::new(pixel_unshuffle_index(hh, ww, c, r)), &[hh / r, ww / r, c * r * r])
}

/// 2×2 neighbourhood concatenation: `(h, w, c)` → `(h/2, w/2, 4c)`, with
/// offsets in the order `(0,0), (0,1), (1,0), (1,1)`.
pub fn merge_neighbourhoods<'t, T: Float>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let (h, w, c) = dims3("patch_merge", &x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("patch_merge: {h}x{w} grid has an odd extent")));
    }
    let mut index = Vec::with_capacity(h * w * c);
    for y in 0..h / 2 {
        for xx in 0..w / 2 {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let base = ((2 * y + dy) * w + 2 * xx + dx) * c;
                index.extend(base..base + c);
            }
        }
    }
    x.gather(Arc::new(index), &[h / 2, w / 2, 4 * c])
}

/// Differentiable bicubic upscale of an `(h, w, c)` image.
pub fn bicubic<'t, T: Float>(x: Var<'t, T>, scale: usize) -> Result<Var<'t, T>> {
    let (h, w, _) = dims3("bicubic", &x)?;
    let y = bicubic_upscale(&x.value(), scale)?;
    x.tape().push("bicubic", y, &[x], move |g| Ok(vec![Some(bicubic_adjoint(g, h, w, scale)?)]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, i: usize, o: usize, bias: bool) -> Self {
        Self {
            w: bld.add(format!("{name}.w"), &[i, o], Init::Uniform(1.0 / (i as f64).sqrt())),
            b: bias.then(|| bld.add(format!("{name}.b"), &[o], Init::Zeros)),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(ctx.p(self.w), self.b.map(|b| ctx.p(b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

impl Norm {
    pub fn new(bld: &mut Builder, name: &str, c: usize) -> Self {
        Self {
            g: bld.add(format!("{name}.g"), &[c], Init::Ones),
            b: bld.add(format!("{name}.b"), &[c], Init::Zeros),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(Some(ctx.p(self.g)), Some(ctx.p(self.b)), LN_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(bld: &mut Builder, name: &str, k: usize, ci: usize, co: usize, stride: usize, pad: usize, zero: bool) -> Self {
        let winit = if zero { Init::Zeros } else { Init::Uniform(1.0 / ((k * k * ci) as f64).sqrt()) };
        Self {
            w: bld.add(format!("{name}.w"), &[k, k, ci, co], winit),
            b: bld.add(format!("{name}.b"), &[co], Init::Zeros),
            stride,
            pad,
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(ctx.p(self.w), Some(ctx.p(self.b)), self.stride, self.pad)
    }
}
