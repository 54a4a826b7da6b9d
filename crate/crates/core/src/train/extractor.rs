//! Frozen convolutional feature map for the perceptual loss.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::srt;
use crate::tensor::{Float, Tensor};

/// Channel widths of the default stack; four stride-2 layers give 1/16
/// resolution.
pub const DEFAULT_WIDTHS: [usize; 5] = [1, 8, 16, 16, 32];

/// Stack of 3×3, stride-2, pad-1 convolutions, each followed by SiLU.
/// Weights are `(3, 3, c_in, c_out)`, never trained.
#[derive(Debug)]
pub struct FeatureExtractor {
    layers: Vec<(Tensor<f64>, Tensor<f64>)>,
    calls: AtomicUsize,
}

impl FeatureExtractor {
    pub fn from_layers(layers: Vec<(Tensor<f64>, Tensor<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature extractor needs at least one layer"));
        }
        let mut cin = 1;
        for (i, (w, b)) in layers.iter().enumerate() {
            match w.shape() {
                [3, 3, ci, co] if *ci == cin && b.shape() == [*co] => cin = *co,
                s => {
                    return Err(Error::Data(format!(
                        "extractor layer {i}: weight {s:?} / bias {:?} does not continue {cin} channels",
                        b.shape()
                    )))
                }
            }
        }
        Ok(Self {
            layers,
            calls: AtomicUsize::new(0),
        })
    }

    /// He-uniform weights `U(±√(6/fan_in))`, zero bias.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = DEFAULT_WIDTHS
            .windows(2)
            .map(|io| {
                let (ci, co) = (io[0], io[1]);
                let bound = (6.0 / (9 * ci) as f64).sqrt();
                let data: Vec<f64> = (0..9 * ci * co).map(|_| rng.gen_range(-bound..bound)).collect();
                (Tensor::new(vec![3, 3, ci, co], data).expect("shape"), Tensor::zeros(&[co]))
            })
            .collect();
        Self::from_layers(layers).expect("default widths chain")
    }

    /// Reads `conv{i}.w.srt` / `conv{i}.b.srt` for `i = 0, 1, …` until the
    /// first missing index.
    pub fn load_pack(dir: &Path) -> Result<Self> {
        let mut layers = Vec::new();
        loop {
            let w = dir.join(format!("conv{}.w.srt", layers.len()));
            if !w.exists() {
                break;
            }
            let b = dir.join(format!("conv{}.b.srt", layers.len()));
            layers.push((srt::read(&w)?, srt::read(&b)?));
        }
        if layers.is_empty() {
            return Err(Error::Data(format!("{}: no conv0.w.srt in weight pack", dir.display())));
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[(Tensor<f64>, Tensor<f64>)] {
        &self.layers
    }

    /// Side length the input must at least have.
    pub fn min_extent(&self) -> usize {
        1 << self.layers.len()
    }

    /// Number of forward passes run so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn features<'t, T: Float>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let m = self.min_extent();
        if s.len() != 3 || s[2] != 1 || s[0] < m || s[1] < m {
            return Err(Error::invalid(format!("feature extractor: input {s:?} smaller than {m}x{m}x1")));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let tape = x.tape();
        let mut y = x;
        for (w, b) in &self.layers {
            y = y.conv2d(tape.constant(w.cast()), Some(tape.constant(b.cast())), 2, 1)?.silu()?;
        }
        Ok(y)
    }
}
