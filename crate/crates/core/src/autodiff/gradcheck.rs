//! Finite-difference gradient checking in 64-bit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

const STEPS: usize = 5;
const STEP_RATIO: f64 = 6.0;

/// Compares the tape gradient of the scalar map `f` at `x` against
/// five-point central differences. Steps run from `step` down by factors of
/// six, and the estimate kept is the one with the smallest error estimate
/// (truncation from the gap to the next finer step, floored by the rounding
/// noise seen at the finest steps). Returns
/// `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_at(f, x, step, 0..x.len())
}

/// [`grad_check`] restricted to the listed coordinates of `x`.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, step: f64, coords: impl IntoIterator<Item = usize>) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "grad_check input" });
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&tape, xv)?;
        let grads = tape.backward(y)?;
        grads.get(xv).cloned().expect("x requires grad")
    };
    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(probe);
        let y = f(&tape, xv)?;
        let v = y.item();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "grad_check probe" });
        }
        Ok(v)
    };
    let mut worst = 0.0f64;
    for i in coords {
        let at = |k: f64| {
            let mut p = x.clone();
            p.data_mut()[i] += k;
            eval(p)
        };
        let mut est = Vec::with_capacity(STEPS);
        for k in 0..STEPS {
            let h = step / STEP_RATIO.powi(k as i32);
            est.push((8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h));
        }
        let steps: Vec<f64> = (0..STEPS).map(|k| step / STEP_RATIO.powi(k as i32)).collect();
        let diff = |k: usize| (est[k] - est[k + 1]).abs();
        // Rounding noise in f, read off the finest pairs where it dominates.
        let noise = (STEPS - 3..STEPS - 1).map(|k| diff(k) * steps[k + 1]).fold(0.0, f64::max);
        // Error of estimate k: its gap to the finer estimate (truncation),
        // but never below the noise floor at that step.
        let numeric = (0..STEPS - 1)
            .map(|k| (diff(k).max(noise / steps[k]), est[k]))
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, v)| v)
            .expect("at least two steps");
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
