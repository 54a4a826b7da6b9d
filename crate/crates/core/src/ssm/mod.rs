//! Selective state-space primitive.
//!
//! A diagonal continuous SSM `h' = A h + B x`, `y = C h` is discretized with a
//! zero-order hold and scanned along a sequence. `Δ`, `B` and `C` are
//! computed from the input itself (`Δ = softplus(x W_Δ + b_Δ)`, `B = x W_B`,
//! `C = x W_C`), and `A = −exp(a_log)` stays strictly negative.

mod reference;
mod scan;
mod zoh;

use std::sync::Arc;

use rand::Rng;

pub use reference::{recurrence_reference, recurrence_reference_states};
pub use scan::{scan_backward, scan_forward, ScanForward, ScanGrads, ScanInputs, ScanMode, ScanShape};
pub use zoh::{zoh_discretize, zoh_grad, zoh_scalar, DiscretePair, ZohCoeff, ZohGrad, SERIES_THRESHOLD};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Range of the initial `Δ = softplus(b_Δ)`, sampled log-uniformly.
pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

/// Concrete parameter bundle for one selective SSM over `channels` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T> {
    /// `(C, N)`; `A = −exp(a_log)`.
    pub a_log: Tensor<T>,
    /// `(C)` skip coefficients, absent when the skip term is disabled.
    pub d_skip: Option<Tensor<T>>,
    /// `(C, C)` and `(C)`.
    pub w_delta: Tensor<T>,
    pub b_delta: Tensor<T>,
    /// `(C, N)` each.
    pub w_b: Tensor<T>,
    pub w_c: Tensor<T>,
}

/// `A` ramp: channel-independent `a_n = −(n + 1)`, stored as `ln(n + 1)`.
pub fn init_a_log<T: Float>(channels: usize, state_dim: usize) -> Tensor<T> {
    let row: Vec<f64> = (0..state_dim).map(|n| ((n + 1) as f64).ln()).collect();
    let data: Vec<f64> = (0..channels).flat_map(|_| row.iter().copied()).collect();
    Tensor::from_f64(vec![channels, state_dim], &data).expect("consistent shape")
}

/// Bias whose softplus is log-uniform in `[DT_MIN, DT_MAX]`.
pub fn init_delta_bias<T: Float, R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Tensor<T> {
    let data: Vec<f64> = (0..channels)
        .map(|_| {
            let dt = (rng.gen::<f64>() * (DT_MAX.ln() - DT_MIN.ln()) + DT_MIN.ln()).exp();
            // softplus⁻¹(dt) = dt + ln(−expm1(−dt))
            dt + (-(-dt).exp_m1()).ln()
        })
        .collect();
    Tensor::from_f64(vec![channels], &data).expect("consistent shape")
}

pub(crate) fn uniform<T: Float, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_f64(shape.to_vec(), &data).expect("consistent shape")
}

impl<T: Float> SsmParams<T> {
    pub fn init<R: Rng + ?Sized>(channels: usize, state_dim: usize, use_d_skip: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        Self {
            a_log: init_a_log(channels, state_dim),
            d_skip: use_d_skip.then(|| Tensor::ones(&[channels])),
            w_delta: uniform(&[channels, channels], bound, rng),
            b_delta: init_delta_bias(channels, rng),
            w_b: uniform(&[channels, state_dim], bound, rng),
            w_c: uniform(&[channels, state_dim], bound, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// `A = −exp(a_log)`.
    pub fn a_diag(&self) -> Tensor<T> {
        self.a_log.map(|v| -v.exp())
    }

    pub fn cast<U: Float>(&self) -> SsmParams<U> {
        SsmParams {
            a_log: self.a_log.cast(),
            d_skip: self.d_skip.as_ref().map(|d| d.cast()),
            w_delta: self.w_delta.cast(),
            b_delta: self.b_delta.cast(),
            w_b: self.w_b.cast(),
            w_c: self.w_c.cast(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> SsmVars<'t, T> {
        SsmVars {
            a_log: tape.leaf(self.a_log.clone(), requires_grad),
            d_skip: self.d_skip.clone().map(|d| tape.leaf(d, requires_grad)),
            w_delta: tape.leaf(self.w_delta.clone(), requires_grad),
            b_delta: tape.leaf(self.b_delta.clone(), requires_grad),
            w_b: tape.leaf(self.w_b.clone(), requires_grad),
            w_c: tape.leaf(self.w_c.clone(), requires_grad),
        }
    }
}

/// SSM parameters recorded on a tape.
#[derive(Clone, Copy)]
pub struct SsmVars<'t, T: Float> {
    pub a_log: Var<'t, T>,
    pub d_skip: Option<Var<'t, T>>,
    pub w_delta: Var<'t, T>,
    pub b_delta: Var<'t, T>,
    pub w_b: Var<'t, T>,
    pub w_c: Var<'t, T>,
}

/// Input-dependent quantities for a token set.
pub struct Projections<'t, T: Float> {
    pub delta: Var<'t, T>,
    pub a: Var<'t, T>,
    pub b: Var<'t, T>,
    pub c: Var<'t, T>,
}

impl<'t, T: Float> SsmVars<'t, T> {
    /// `Δ`, `A`, `B`, `C` for tokens `x (L, C)`.
    pub fn project(&self, x: Var<'t, T>) -> Result<Projections<'t, T>> {
        Ok(Projections {
            delta: x.linear(self.w_delta, Some(self.b_delta))?.softplus()?,
            a: self.a_log.exp()?.neg()?,
            b: x.linear(self.w_b, None)?,
            c: x.linear(self.w_c, None)?,
        })
    }
}

/// Records a multi-traversal scan on the tape. `x` and `delta` are `(L, C)`,
/// `a` is `(C, N)`, `b` and `c` are `(L, N)`; the result is `(D, L, C)` in
/// token order, one slab per entry of `orders`.
pub fn scan_op<'t, T: Float>(
    x: Var<'t, T>,
    proj: &Projections<'t, T>,
    d_skip: Option<Var<'t, T>>,
    orders: Arc<Vec<Vec<usize>>>,
    mode: ScanMode,
) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let [l, ch] = xs[..] else {
        return Err(Error::shape("selective_scan", &xs, &[0, 0]));
    };
    let ashape = proj.a.shape();
    if ashape.len() != 2 || ashape[0] != ch {
        return Err(Error::shape("selective_scan", &xs, &ashape));
    }
    let n = ashape[1];
    let shape = ScanShape {
        len: l,
        channels: ch,
        state_dim: n,
    };
    let (xv, dv, av, bv, cv) = (x.value(), proj.delta.value(), proj.a.value(), proj.b.value(), proj.c.value());
    let skip = d_skip.map(|d| d.value());
    let inputs = ScanInputs {
        x: xv.data(),
        delta: dv.data(),
        a: av.data(),
        b: bv.data(),
        c: cv.data(),
        d_skip: skip.as_ref().map(|d| d.data()),
    };
    let needs_grad = [x, proj.delta, proj.a, proj.b, proj.c]
        .iter()
        .chain(d_skip.iter())
        .any(|v| v.requires_grad());
    let fwd = scan_forward(&inputs, shape, &orders, mode, needs_grad)?;
    let dirs = orders.len();
    let y = Tensor::new(vec![dirs, l, ch], fwd.y)?;
    let caches = fwd.caches;
    let mut parents = vec![x, proj.delta, proj.a, proj.b, proj.c];
    parents.extend(d_skip);
    x.tape().push("selective_scan", y, &parents, move |g| {
        let inputs = ScanInputs {
            x: xv.data(),
            delta: dv.data(),
            a: av.data(),
            b: bv.data(),
            c: cv.data(),
            d_skip: skip.as_ref().map(|d| d.data()),
        };
        let gr = scan_backward(&inputs, shape, &orders, &caches, g.data());
        let mut out = vec![
            Some(Tensor::new(vec![l, ch], gr.x)?),
            Some(Tensor::new(vec![l, ch], gr.delta)?),
            Some(Tensor::new(vec![ch, n], gr.a)?),
            Some(Tensor::new(vec![l, n], gr.b)?),
            Some(Tensor::new(vec![l, n], gr.c)?),
        ];
        if let Some(gd) = gr.d_skip {
            out.push(Some(Tensor::new(vec![ch], gd)?));
        }
        Ok(out)
    })
}

/// Selective scan of one sequence `x (L, C)`; returns `(L, C)`.
pub fn selective_scan<'t, T: Float>(x: Var<'t, T>, params: &SsmVars<'t, T>, mode: ScanMode) -> Result<Var<'t, T>> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(Error::shape("selective_scan", &xs, &[0, 0]));
    }
    let proj = params.project(x)?;
    let identity: Vec<usize> = (0..xs[0]).collect();
    let y = scan_op(x, &proj, params.d_skip, Arc::new(vec![identity]), mode)?;
    y.reshape(&xs)
}

/// Evaluates the same map as [`selective_scan`] through the literal
/// reference loop, without recording gradients. Used as the oracle.
pub fn selective_scan_reference<T: Float>(x: &Tensor<T>, params: &SsmParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let xv = tape.constant(x.clone());
    let proj = vars.project(xv)?;
    let (l, ch, n) = (x.shape()[0], x.shape()[1], params.state_dim());
    let pair = zoh_discretize(proj.delta.value().data(), proj.a.value().data(), proj.b.value().data(), l, ch, n)?;
    let y = recurrence_reference(&pair, proj.c.value().data(), x.data(), params.d_skip.as_ref().map(|d| d.data()))?;
    Tensor::new(vec![l, ch], y)
}

#[cfg(test)]
mod tests;
