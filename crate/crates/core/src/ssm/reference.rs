//! Literal per-step evaluation of the discrete recurrence
//! `h_t = Ā_t h_{t−1} + B̄_t x_t`, `y_t = C_t h_t + D x_t`, with `h_0 = 0`.
//! Every faster path is checked against this loop.

use super::zoh::DiscretePair;
use crate::error::{Error, Result};
use crate::tensor::Float;

/// Output `y (L×C)` and the full state trace `h (L×C×N)`.
pub fn recurrence_reference_states<T: Float>(
    pair: &DiscretePair<T>,
    c: &[T],
    x: &[T],
    d_skip: Option<&[T]>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (l, ch, n) = (pair.len, pair.channels, pair.state_dim);
    if c.len() != l * n {
        return Err(Error::shape("recurrence_reference", &[c.len()], &[l, n]));
    }
    if x.len() != l * ch {
        return Err(Error::shape("recurrence_reference", &[x.len()], &[l, ch]));
    }
    if let Some(d) = d_skip {
        if d.len() != ch {
            return Err(Error::shape("recurrence_reference", &[d.len()], &[ch]));
        }
    }
    let mut y = vec![T::zero(); l * ch];
    let mut states = vec![T::zero(); l * ch * n];
    let mut h = vec![T::zero(); ch * n];
    for t in 0..l {
        for ci in 0..ch {
            let xt = x[t * ch + ci];
            let mut acc = T::zero();
            for k in 0..n {
                let idx = (t * ch + ci) * n + k;
                let s = &mut h[ci * n + k];
                *s = pair.a_bar[idx] * *s + pair.b_bar[idx] * xt;
                acc += c[t * n + k] * *s;
                states[idx] = *s;
            }
            if let Some(d) = d_skip {
                acc += d[ci] * xt;
            }
            y[t * ch + ci] = acc;
        }
    }
    Ok((y, states))
}

pub fn recurrence_reference<T: Float>(
    pair: &DiscretePair<T>,
    c: &[T],
    x: &[T],
    d_skip: Option<&[T]>,
) -> Result<Vec<T>> {
    recurrence_reference_states(pair, c, x, d_skip).map(|(y, _)| y)
}
