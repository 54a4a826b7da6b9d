//! Pixel and feature-space losses over a batch of `(H, W, 1)` images.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Float;

use super::extractor::FeatureExtractor;

fn check_batch<T: Float>(op: &'static str, sr: &[Var<'_, T>], hr: &[Var<'_, T>]) -> Result<()> {
    if sr.is_empty() || sr.len() != hr.len() {
        return Err(Error::invalid(format!("{op}: batch sizes {} and {}", sr.len(), hr.len())));
    }
    for (a, b) in sr.iter().zip(hr) {
        if a.shape() != b.shape() {
            return Err(Error::shape(op, &a.shape(), &b.shape()));
        }
    }
    Ok(())
}

/// `(1/n) Σ_i mean|SR_i − HR_i|`.
pub fn l1_loss<'t, T: Float>(sr: &[Var<'t, T>], hr: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    check_batch("l1_loss", sr, hr)?;
    let terms = sr
        .iter()
        .zip(hr)
        .map(|(a, b)| a.sub(*b)?.abs()?.mean())
        .collect::<Result<Vec<_>>>()?;
    batch_mean(&terms)
}

fn batch_mean<'t, T: Float>(terms: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc.add(*t)?;
    }
    acc.scale(1.0 / terms.len() as f64)
}

/// `(1/n) √(Σ_i mean((φ(SR_i) − φ(HR_i))²))`.
pub fn perceptual_loss<'t, T: Float>(sr: &[Var<'t, T>], hr: &[Var<'t, T>], phi: &FeatureExtractor) -> Result<Var<'t, T>> {
    check_batch("perceptual_loss", sr, hr)?;
    let mut acc: Option<Var<'t, T>> = None;
    for (a, b) in sr.iter().zip(hr) {
        let d = phi.features(*a)?.sub(phi.features(*b)?)?;
        let e = d.mul(d)?.mean()?;
        acc = Some(match acc {
            Some(s) => s.add(e)?,
            None => e,
        });
    }
    acc.expect("non-empty batch").sqrt()?.scale(1.0 / sr.len() as f64)
}

pub struct LossParts<'t, T: Float> {
    pub l1: Var<'t, T>,
    /// Absent when `beta` is zero: the extractor is never run.
    pub perceptual: Option<Var<'t, T>>,
    pub total: Var<'t, T>,
}

/// `l1 + beta · perceptual`.
pub fn total_loss<'t, T: Float>(sr: &[Var<'t, T>], hr: &[Var<'t, T>], beta: f64, phi: &FeatureExtractor) -> Result<LossParts<'t, T>> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("loss weight beta {beta} must be non-negative")));
    }
    let l1 = l1_loss(sr, hr)?;
    if beta == 0.0 {
        return Ok(LossParts { l1, perceptual: None, total: l1 });
    }
    let p = perceptual_loss(sr, hr, phi)?;
    Ok(LossParts {
        l1,
        perceptual: Some(p),
        total: combine(l1, p, beta)?,
    })
}

pub fn combine<'t, T: Float>(l1: Var<'t, T>, perceptual: Var<'t, T>, beta: f64) -> Result<Var<'t, T>> {
    l1.add(perceptual.scale(beta)?)
}
