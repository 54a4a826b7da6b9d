//! Selective-scan kernels.
//!
//! One call scans `D` traversal orders of the same `L` tokens. Tokens carry
//! `x`, `Δ` (both `L×C`) and input-dependent `B`, `C` (both `L×N`); `A` is
//! `C×N`. Discretization depends only on the token, so it is computed once
//! per channel and shared by every traversal. Outputs are written back in
//! token order, shaped `(D, L, C)`.
//!
//! The chunked mode restates the linear recurrence blockwise: each chunk is
//! scanned from a zero state while tracking the running product of `Ā`, then
//! chunk entry states are composed left to right
//! (`h_in[k+1] = Πₖ Ā · h_in[k] + h_local_end[k]`) and folded back in.

use super::zoh::{zoh_grad, zoh_scalar};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// Literal per-step loop.
    #[default]
    Sequential,
    /// Blocked evaluation with the given chunk length.
    Chunked(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct ScanShape {
    pub len: usize,
    pub channels: usize,
    pub state_dim: usize,
}

pub struct ScanInputs<'a, T> {
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d_skip: Option<&'a [T]>,
}

impl<T: Float> ScanInputs<'_, T> {
    pub fn validate(&self, s: ScanShape, orders: &[Vec<usize>]) -> Result<()> {
        let (l, ch, n) = (s.len, s.channels, s.state_dim);
        let checks: [(&str, usize, usize); 5] = [
            ("x", self.x.len(), l * ch),
            ("delta", self.delta.len(), l * ch),
            ("a", self.a.len(), ch * n),
            ("b", self.b.len(), l * n),
            ("c", self.c.len(), l * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::invalid(format!("selective_scan: {name} has {got} elements, expected {want}")));
            }
        }
        if let Some(d) = self.d_skip {
            if d.len() != ch {
                return Err(Error::shape("selective_scan", &[d.len()], &[ch]));
            }
        }
        for o in orders {
            if o.len() != l || o.iter().any(|&p| p >= l) {
                return Err(Error::invalid("selective_scan: traversal order does not cover the sequence"));
            }
        }
        if let Some(v) = self.delta.iter().find(|&&d| !(d > T::zero())) {
            return Err(Error::invalid(format!("selective_scan: step {v} must be positive")));
        }
        if let Some(v) = self.a.iter().find(|&&a| !(a < T::zero())) {
            return Err(Error::invalid(format!("selective_scan: diagonal entry {v} must be negative")));
        }
        Ok(())
    }
}

/// Per-channel forward state kept for the backward pass.
pub struct ChannelCache<T> {
    /// `Ā` per token, `L×N`.
    a_bar: Vec<T>,
    /// `F` per token with `B̄ = F·b`, `L×N`.
    f: Vec<T>,
    /// States per traversal step, `D×L×N`.
    h: Vec<T>,
}

pub struct ScanForward<T> {
    /// `(D, L, C)` in token order.
    pub y: Vec<T>,
    pub caches: Vec<ChannelCache<T>>,
}

fn discretize_channel<T: Float>(inp: &ScanInputs<'_, T>, s: ScanShape, ci: usize) -> (Vec<T>, Vec<T>) {
    let (l, ch, n) = (s.len, s.channels, s.state_dim);
    let mut a_bar = Vec::with_capacity(l * n);
    let mut f = Vec::with_capacity(l * n);
    let arow = &inp.a[ci * n..(ci + 1) * n];
    for p in 0..l {
        let d = inp.delta[p * ch + ci];
        for &a in arow {
            let k = zoh_scalar(d, a);
            a_bar.push(k.a_bar);
            f.push(k.f);
        }
    }
    (a_bar, f)
}

/// Runs the scan for every channel and traversal. `keep_states` retains the
/// per-channel caches needed by [`scan_backward`].
pub fn scan_forward<T: Float>(
    inp: &ScanInputs<'_, T>,
    s: ScanShape,
    orders: &[Vec<usize>],
    mode: ScanMode,
    keep_states: bool,
) -> Result<ScanForward<T>> {
    inp.validate(s, orders)?;
    if let ScanMode::Chunked(0) = mode {
        return Err(Error::invalid("selective_scan: chunk length must be positive"));
    }
    let (l, ch, n) = (s.len, s.channels, s.state_dim);
    let dirs = orders.len();
    let per_channel = parallel::map(ch, |ci| {
        let (a_bar, f) = discretize_channel(inp, s, ci);
        let mut y_col = vec![T::zero(); dirs * l];
        let mut h_all = vec![T::zero(); dirs * l * n];
        let dskip = inp.d_skip.map(|d| d[ci]);
        for (di, order) in orders.iter().enumerate() {
            let hs = &mut h_all[di * l * n..(di + 1) * l * n];
            match mode {
                ScanMode::Sequential => run_sequential(inp, s, ci, order, &a_bar, &f, hs),
                ScanMode::Chunked(k) => run_chunked(inp, s, ci, order, &a_bar, &f, hs, k.min(l)),
            }
            for (t, &p) in order.iter().enumerate() {
                let xt = inp.x[p * ch + ci];
                let crow = &inp.c[p * n..(p + 1) * n];
                let mut acc = T::zero();
                for (&cv, &hv) in crow.iter().zip(&hs[t * n..(t + 1) * n]) {
                    acc += cv * hv;
                }
                if let Some(d) = dskip {
                    acc += d * xt;
                }
                y_col[di * l + p] = acc;
            }
        }
        (y_col, ChannelCache { a_bar, f, h: h_all })
    });
    let mut y = vec![T::zero(); dirs * l * ch];
    let mut caches = Vec::with_capacity(if keep_states { ch } else { 0 });
    for (ci, (y_col, cache)) in per_channel.into_iter().enumerate() {
        for (k, &v) in y_col.iter().enumerate() {
            y[k * ch + ci] = v;
        }
        if keep_states {
            caches.push(cache);
        }
    }
    Ok(ScanForward { y, caches })
}

#[inline]
fn step<T: Float>(h: &mut [T], a_bar: &[T], f: &[T], b: &[T], xt: T) {
    for k in 0..h.len() {
        h[k] = a_bar[k] * h[k] + f[k] * b[k] * xt;
    }
}

fn run_sequential<T: Float>(
    inp: &ScanInputs<'_, T>,
    s: ScanShape,
    ci: usize,
    order: &[usize],
    a_bar: &[T],
    f: &[T],
    hs: &mut [T],
) {
    let (ch, n) = (s.channels, s.state_dim);
    let mut h = vec![T::zero(); n];
    for (t, &p) in order.iter().enumerate() {
        let xt = inp.x[p * ch + ci];
        let r = p * n..(p + 1) * n;
        step(&mut h, &a_bar[r.clone()], &f[r.clone()], &inp.b[r], xt);
        hs[t * n..(t + 1) * n].copy_from_slice(&h);
    }
}

#[allow(clippy::too_many_arguments)]
fn run_chunked<T: Float>(
    inp: &ScanInputs<'_, T>,
    s: ScanShape,
    ci: usize,
    order: &[usize],
    a_bar: &[T],
    f: &[T],
    hs: &mut [T],
    chunk: usize,
) {
    let (l, ch, n) = (s.len, s.channels, s.state_dim);
    let chunks = l.div_ceil(chunk);
    // Local pass: zero entry state per chunk, plus the running Ā product.
    let mut prod = vec![T::one(); l * n];
    for k in 0..chunks {
        let (t0, t1) = (k * chunk, ((k + 1) * chunk).min(l));
        let mut h = vec![T::zero(); n];
        let mut pr = vec![T::one(); n];
        for t in t0..t1 {
            let p = order[t];
            let xt = inp.x[p * ch + ci];
            let r = p * n..(p + 1) * n;
            step(&mut h, &a_bar[r.clone()], &f[r.clone()], &inp.b[r.clone()], xt);
            for (q, &a) in pr.iter_mut().zip(&a_bar[r]) {
                *q *= a;
            }
            hs[t * n..(t + 1) * n].copy_from_slice(&h);
            prod[t * n..(t + 1) * n].copy_from_slice(&pr);
        }
    }
    // Carry pass: compose chunk entry states left to right from the local
    // end states, then fold them in. The first chunk starts from zero and is
    // left untouched.
    let mut h_in = vec![T::zero(); chunks * n];
    for k in 1..chunks {
        let prev_end = k * chunk - 1;
        for j in 0..n {
            h_in[k * n + j] = prod[prev_end * n + j] * h_in[(k - 1) * n + j] + hs[prev_end * n + j];
        }
    }
    for k in 1..chunks {
        let (t0, t1) = (k * chunk, ((k + 1) * chunk).min(l));
        for t in t0..t1 {
            for j in 0..n {
                hs[t * n + j] += prod[t * n + j] * h_in[k * n + j];
            }
        }
    }
}

/// Gradients with respect to every scan input.
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Option<Vec<T>>,
}

/// Reverse pass for [`scan_forward`]; `gy` is `(D, L, C)` in token order.
pub fn scan_backward<T: Float>(
    inp: &ScanInputs<'_, T>,
    s: ScanShape,
    orders: &[Vec<usize>],
    caches: &[ChannelCache<T>],
    gy: &[T],
) -> ScanGrads<T> {
    let (l, ch, n) = (s.len, s.channels, s.state_dim);
    struct ChannelGrad<T> {
        gx: Vec<T>,
        gdelta: Vec<T>,
        ga: Vec<T>,
        gb: Vec<T>,
        gc: Vec<T>,
        gd: T,
    }
    let per_channel = parallel::map(ch, |ci| {
        let cache = &caches[ci];
        let mut acc_e = vec![T::zero(); l * n];
        let mut acc_u = vec![T::zero(); l * n];
        let mut gc = vec![T::zero(); l * n];
        let mut gx = vec![T::zero(); l];
        let mut gd = T::zero();
        let dskip = inp.d_skip.map(|d| d[ci]);
        let mut gh = vec![T::zero(); n];
        for (di, order) in orders.iter().enumerate() {
            let hs = &cache.h[di * l * n..(di + 1) * l * n];
            gh.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..l).rev() {
                let p = order[t];
                let gyt = gy[(di * l + p) * ch + ci];
                let xt = inp.x[p * ch + ci];
                if let Some(d) = dskip {
                    gd += gyt * xt;
                    gx[p] += gyt * d;
                }
                let crow = &inp.c[p * n..(p + 1) * n];
                let ht = &hs[t * n..(t + 1) * n];
                let gcrow = &mut gc[p * n..(p + 1) * n];
                let abar = &cache.a_bar[p * n..(p + 1) * n];
                let er = &mut acc_e[p * n..(p + 1) * n];
                let ur = &mut acc_u[p * n..(p + 1) * n];
                if t > 0 {
                    let hp = &hs[(t - 1) * n..t * n];
                    for k in 0..n {
                        gh[k] += gyt * crow[k];
                        gcrow[k] += gyt * ht[k];
                        er[k] += gh[k] * hp[k];
                        ur[k] += gh[k];
                        gh[k] *= abar[k];
                    }
                } else {
                    for k in 0..n {
                        gh[k] += gyt * crow[k];
                        gcrow[k] += gyt * ht[k];
                        ur[k] += gh[k];
                    }
                }
            }
        }
        // Fold the traversal-summed adjoints through the discretization.
        let arow = &inp.a[ci * n..(ci + 1) * n];
        let mut ga = vec![T::zero(); n];
        let mut gb = vec![T::zero(); l * n];
        let mut gdelta = vec![T::zero(); l];
        for p in 0..l {
            let d = inp.delta[p * ch + ci];
            let xt = inp.x[p * ch + ci];
            let brow = &inp.b[p * n..(p + 1) * n];
            let mut gdp = T::zero();
            let mut gxp = T::zero();
            for k in 0..n {
                let idx = p * n + k;
                let coeff = super::zoh::ZohCoeff {
                    a_bar: cache.a_bar[idx],
                    f: cache.f[idx],
                };
                let zg = zoh_grad(d, arow[k], coeff);
                let gu = acc_u[idx];
                let ge = acc_e[idx];
                gxp += gu * coeff.f * brow[k];
                gb[idx] = gu * coeff.f * xt;
                let gf = gu * brow[k] * xt;
                gdp += ge * zg.dabar_ddelta + gf * zg.df_ddelta;
                ga[k] += ge * zg.dabar_da + gf * zg.df_da;
            }
            gdelta[p] = gdp;
            gx[p] += gxp;
        }
        ChannelGrad {
            gx,
            gdelta,
            ga,
            gb,
            gc,
            gd,
        }
    });

    let mut out = ScanGrads {
        x: vec![T::zero(); l * ch],
        delta: vec![T::zero(); l * ch],
        a: vec![T::zero(); ch * n],
        b: vec![T::zero(); l * n],
        c: vec![T::zero(); l * n],
        d_skip: inp.d_skip.map(|_| vec![T::zero(); ch]),
    };
    for (ci, g) in per_channel.into_iter().enumerate() {
        for p in 0..l {
            out.x[p * ch + ci] = g.gx[p];
            out.delta[p * ch + ci] = g.gdelta[p];
        }
        out.a[ci * n..(ci + 1) * n].copy_from_slice(&g.ga);
        for (acc, v) in out.b.iter_mut().zip(&g.gb) {
            *acc += *v;
        }
        for (acc, v) in out.c.iter_mut().zip(&g.gc) {
            *acc += *v;
        }
        if let Some(gd) = &mut out.d_skip {
            gd[ci] = g.gd;
        }
    }
    out
}
