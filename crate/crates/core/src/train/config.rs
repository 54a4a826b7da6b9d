//! Training configuration: one JSON document, overridable key by key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::self_prior::PerturbConfig;
use crate::unet::UNetConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub seed: u64,
    /// Directory of `conv{i}.w.srt` / `conv{i}.b.srt`; overrides `seed`.
    pub pack: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub unet: UNetConfig,
    pub lr: f64,
    pub beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub perturb: PerturbConfig,
    pub extractor: ExtractorConfig,
    /// Dataset directory (holding `manifest.json`).
    pub data: PathBuf,
    /// Run directory for the log and checkpoints.
    pub out: PathBuf,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Run every kernel on the calling thread.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            unet: UNetConfig::default(),
            lr: adam.lr,
            beta: 0.01,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            perturb: PerturbConfig::default(),
            extractor: ExtractorConfig::default(),
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
            checkpoint_every: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.perturb.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta {} must be non-negative", self.beta)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_beta1/adam_beta2 must lie in [0, 1) and adam_eps be positive".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Reads a JSON file (or starts from defaults), applies `key=value`
    /// overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets the dotted path `key` (dashes read as underscores) in `doc`. The
/// value is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let key = key.replace('-', "_");
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut node = doc;
    for p in parts {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not inside an object")))?;
        node = obj.entry(p).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key}: parent is not an object")))?
        .insert(last.to_string(), value);
    Ok(())
}
