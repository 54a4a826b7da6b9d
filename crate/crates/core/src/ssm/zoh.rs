//! Zero-order-hold discretization of a diagonal continuous-time SSM.
//!
//! For a diagonal entry `a < 0` and step `Δ > 0`:
//!
//! ```text
//! Ā = exp(Δa)
//! B̄ = (Δa)⁻¹ (exp(Δa) − 1) · Δb = expm1(Δa) / a · b
//! ```
//!
//! When `|Δa| < SERIES_THRESHOLD` the quotient is replaced by its two-term
//! series `Δ(1 + Δa/2)` (and `Ā` by `1 + Δa + (Δa)²/2`), whose relative error
//! there is below 1e-13.

use crate::error::{Error, Result};
use crate::tensor::{cst, Float};

pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Discretized coefficients for one `(Δ, a)` pair: `Ā` and the factor `F`
/// with `B̄ = F · b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZohCoeff<T> {
    pub a_bar: T,
    pub f: T,
}

#[inline]
pub fn zoh_scalar<T: Float>(delta: T, a: T) -> ZohCoeff<T> {
    let z = delta * a;
    if z.abs() < cst(SERIES_THRESHOLD) {
        let half: T = cst(0.5);
        ZohCoeff {
            a_bar: T::one() + z + half * z * z,
            f: delta * (T::one() + half * z),
        }
    } else if z < cst(-0.5) {
        // exp(z) ≤ 0.61: the subtraction below loses nothing.
        let e = z.exp();
        ZohCoeff {
            a_bar: e,
            f: (e - T::one()) / a,
        }
    } else {
        let em1 = z.exp_m1();
        ZohCoeff {
            a_bar: em1 + T::one(),
            f: em1 / a,
        }
    }
}

/// Partial derivatives of `(Ā, F)` with respect to `Δ` and `a`.
#[derive(Debug, Clone, Copy)]
pub struct ZohGrad<T> {
    pub dabar_ddelta: T,
    pub dabar_da: T,
    pub df_ddelta: T,
    pub df_da: T,
}

/// `g(z) = (z·eᶻ − (eᶻ − 1)) / z²`, so that `∂F/∂a = Δ²·g(Δa)`.
#[inline]
fn g_of<T: Float>(z: T, e: T) -> T {
    if z.abs() < cst(0.5) {
        // Σ_{m≥2} z^{m−2} (m−1)/m!
        let mut sum = T::zero();
        let mut fact = 1.0f64;
        let mut zp = T::one();
        for m in 2..16 {
            fact *= m as f64;
            sum += zp * cst::<T>((m - 1) as f64 / fact);
            zp *= z;
        }
        sum
    } else {
        (z * e - (e - T::one())) / (z * z)
    }
}

#[inline]
pub fn zoh_grad<T: Float>(delta: T, a: T, coeff: ZohCoeff<T>) -> ZohGrad<T> {
    let z = delta * a;
    if z.abs() < cst(SERIES_THRESHOLD) {
        let half: T = cst(0.5);
        let dabar_dz = T::one() + z;
        ZohGrad {
            dabar_ddelta: dabar_dz * a,
            dabar_da: dabar_dz * delta,
            df_ddelta: T::one() + z,
            df_da: half * delta * delta,
        }
    } else {
        let e = coeff.a_bar;
        ZohGrad {
            dabar_ddelta: e * a,
            dabar_da: e * delta,
            df_ddelta: e,
            df_da: delta * delta * g_of(z, e),
        }
    }
}

/// Discretized sequence: `a_bar` and `b_bar`, both `(L, C, N)` row-major.
/// The per-step input term is `b_bar[t, c, n] · x[t, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePair<T> {
    pub len: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
}

/// Discretizes `delta (L×C)`, `a_diag (C×N)` and input-dependent `b (L×N)`.
pub fn zoh_discretize<T: Float>(
    delta: &[T],
    a_diag: &[T],
    b: &[T],
    len: usize,
    channels: usize,
    state_dim: usize,
) -> Result<DiscretePair<T>> {
    if delta.len() != len * channels {
        return Err(Error::shape("zoh_discretize", &[delta.len()], &[len, channels]));
    }
    if a_diag.len() != channels * state_dim {
        return Err(Error::shape("zoh_discretize", &[a_diag.len()], &[channels, state_dim]));
    }
    if b.len() != len * state_dim {
        return Err(Error::shape("zoh_discretize", &[b.len()], &[len, state_dim]));
    }
    if let Some(d) = delta.iter().find(|&&d| !(d > T::zero())) {
        return Err(Error::invalid(format!("zoh_discretize: step {d} must be positive")));
    }
    if let Some(a) = a_diag.iter().find(|&&a| !(a < T::zero())) {
        return Err(Error::invalid(format!("zoh_discretize: diagonal entry {a} must be negative")));
    }
    let mut a_bar = Vec::with_capacity(len * channels * state_dim);
    let mut b_bar = Vec::with_capacity(len * channels * state_dim);
    for t in 0..len {
        for c in 0..channels {
            let d = delta[t * channels + c];
            for n in 0..state_dim {
                let k = zoh_scalar(d, a_diag[c * state_dim + n]);
                a_bar.push(k.a_bar);
                b_bar.push(k.f * b[t * state_dim + n]);
            }
        }
    }
    Ok(DiscretePair {
        len,
        channels,
        state_dim,
        a_bar,
        b_bar,
    })
}
