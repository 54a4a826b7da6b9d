use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::ScanMode;

/// Every architectural hyperparameter. Defaults are the full-size network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub scale: usize,
    pub patch_size: usize,
    pub level_channels: Vec<usize>,
    pub blocks_per_level: usize,
    pub state_dim: usize,
    /// `C_e = expansion · C` inside each block.
    pub expansion: usize,
    pub dropout: f64,
    pub head_channels: usize,
    /// Learned direction weights; off means fixed uniform fusion.
    pub use_iss2d_weights: bool,
    pub use_self_prior: bool,
    pub use_d_skip: bool,
    /// Four independent SSM parameter sets per block instead of one.
    pub per_direction_params: bool,
    /// 0 scans sequentially, otherwise chunk length of the blocked scan.
    pub scan_chunk: usize,
}

pub const LEVELS: usize = 4;

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            scale: 2,
            patch_size: 2,
            level_channels: vec![96, 128, 384, 768],
            blocks_per_level: 4,
            state_dim: 16,
            expansion: 2,
            dropout: 0.3,
            head_channels: 16,
            use_iss2d_weights: true,
            use_self_prior: true,
            use_d_skip: true,
            per_direction_params: false,
            scan_chunk: 0,
        }
    }
}

impl UNetConfig {
    /// Desk-scale network used by the overfit checks.
    pub fn micro() -> Self {
        Self {
            level_channels: vec![16, 24, 48, 96],
            blocks_per_level: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale != 2 && self.scale != 4 {
            return bad(format!("scale {} not supported; expected 2 or 4", self.scale));
        }
        if self.level_channels.len() != LEVELS {
            return bad(format!("expected {LEVELS} level channel counts, got {}", self.level_channels.len()));
        }
        if self.level_channels.contains(&0) || self.head_channels == 0 || self.state_dim == 0 || self.expansion == 0 {
            return bad("channel counts, state_dim and expansion must be positive".into());
        }
        if self.patch_size == 0 || self.level_channels[0] % (self.patch_size * self.patch_size) != 0 {
            return bad(format!(
                "level_channels[0] = {} must be divisible by patch_size² = {}",
                self.level_channels[0],
                self.patch_size * self.patch_size
            ));
        }
        if self.blocks_per_level == 0 {
            return bad("blocks_per_level must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// High-resolution extents must be multiples of this.
    pub fn hr_divisor(&self) -> usize {
        self.patch_size << (LEVELS - 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.hr_divisor();
        let (hh, ww) = (h * self.scale, w * self.scale);
        if hh % d != 0 || ww % d != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} upscales to {hh}x{ww}; both must be divisible by {d} (patch size {} with {} merges)",
                self.patch_size,
                LEVELS - 1
            )));
        }
        Ok(())
    }

    pub fn scan_mode(&self) -> ScanMode {
        match self.scan_chunk {
            0 => ScanMode::Sequential,
            k => ScanMode::Chunked(k),
        }
    }
}
