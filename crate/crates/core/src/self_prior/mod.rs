//! Training-time occlusion: one square brightness block dropped at a random
//! spot inside a central region of the low-resolution input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cst, Float, Tensor};

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub origin_y: usize,
    pub origin_x: usize,
    pub height: usize,
    pub width: usize,
}

/// Central quarter-area region: origin at a quarter of each extent, size half.
pub fn default_roi(h: usize, w: usize) -> Result<RoiSpec> {
    if h < 10 || w < 10 {
        return Err(Error::invalid(format!("default_roi: image {h}x{w} is smaller than 10x10")));
    }
    Ok(RoiSpec {
        origin_y: h / 4,
        origin_x: w / 4,
        height: h / 2,
        width: w / 2,
    })
}

impl RoiSpec {
    pub fn validate(&self, h: usize, w: usize, block: usize) -> Result<()> {
        if self.origin_y + self.height > h || self.origin_x + self.width > w {
            return Err(Error::invalid(format!("ROI {self:?} leaves the {h}x{w} image")));
        }
        if block == 0 || self.height < block || self.width < block {
            return Err(Error::invalid(format!("ROI {}x{} cannot hold a {block}x{block} block", self.height, self.width)));
        }
        Ok(())
    }

    /// Number of admissible top-left positions per axis.
    pub fn positions(&self, block: usize) -> (usize, usize) {
        (self.height + 1 - block, self.width + 1 - block)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    /// Block pixels are set to the brightness.
    #[default]
    Replace,
    /// Brightness is added and the result clipped to `[0, 1]`.
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub block: usize,
    pub prob: f64,
    pub mode: PerturbMode,
    /// `None` uses [`default_roi`] for each image.
    pub roi: Option<RoiSpec>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            block: 5,
            prob: 1.0,
            mode: PerturbMode::Replace,
            roi: None,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::Config("perturb.block must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::Config(format!("perturb.prob {} outside [0, 1]", self.prob)));
        }
        Ok(())
    }

    pub fn roi_for(&self, h: usize, w: usize) -> Result<RoiSpec> {
        let roi = match self.roi {
            Some(r) => r,
            None => default_roi(h, w)?,
        };
        roi.validate(h, w, self.block)?;
        Ok(roi)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbRecord {
    pub block_y: usize,
    pub block_x: usize,
    pub brightness: f64,
    pub applied: bool,
}

/// Returns a perturbed copy of `image (h, w, 1)`. Outside training the copy
/// is exact and `applied` is false. Four draws are always taken in training
/// (gate, row, column, brightness) so streams stay aligned whatever the
/// outcome.
pub fn perturb<T: Float, R: Rng + ?Sized>(
    image: &Tensor<T>,
    cfg: &PerturbConfig,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, PerturbRecord)> {
    let (h, w) = match image.shape() {
        [h, w, 1] => (*h, *w),
        s => return Err(Error::shape("perturb", s, &[0, 0, 1])),
    };
    let roi = cfg.roi_for(h, w)?;
    let mut out = image.clone();
    if !training {
        return Ok((out, PerturbRecord::default()));
    }
    let gate: f64 = rng.gen();
    let (ny, nx) = roi.positions(cfg.block);
    let block_y = roi.origin_y + rng.gen_range(0..ny);
    let block_x = roi.origin_x + rng.gen_range(0..nx);
    let brightness: f64 = rng.gen();
    let applied = gate < cfg.prob;
    if applied {
        let b: T = cst(brightness);
        let data = out.data_mut();
        for y in block_y..block_y + cfg.block {
            for p in &mut data[y * w + block_x..y * w + block_x + cfg.block] {
                *p = match cfg.mode {
                    PerturbMode::Replace => b,
                    PerturbMode::Add => (*p + b).max(T::zero()).min(T::one()),
                };
            }
        }
    }
    Ok((
        out,
        PerturbRecord {
            block_y,
            block_x,
            brightness,
            applied,
        },
    ))
}
