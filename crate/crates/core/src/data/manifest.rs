//! Dataset manifest: ordered slices with split tags, stored as
//! `manifest.json` with sorted keys. Paths are relative to the manifest's
//! directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::srt;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub name: String,
    pub hr: String,
    #[serde(default)]
    pub lr: Option<String>,
    pub split: Split,
    pub norm_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub size: usize,
    /// Set once low-resolution inputs exist.
    #[serde(default)]
    pub scale: Option<usize>,
    pub slices: Vec<SliceEntry>,
}

/// Rebuilds every object with keys in sorted order.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut pairs: Vec<(String, Value)> = map.into_iter().collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(pairs.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

pub fn to_canonical_json<S: Serialize>(value: &S) -> Result<String> {
    Ok(serde_json::to_string_pretty(&canonical(serde_json::to_value(value)?))?)
}

/// High/low resolution pair loaded from disk.
#[derive(Debug, Clone)]
pub struct SlicePair {
    pub name: String,
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub scale: usize,
    pub norm_max: f64,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("manifest version {} unsupported", self.version)));
        }
        let mut seen = [BTreeSet::new(), BTreeSet::new()];
        for s in &self.slices {
            let k = s.split as usize;
            for p in std::iter::once(&s.hr).chain(s.lr.iter()) {
                if seen[1 - k].contains(p.as_str()) {
                    return Err(Error::Data(format!("{p} appears in both splits")));
                }
                seen[k].insert(p.as_str());
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SliceEntry> {
        self.slices.iter().filter(move |s| s.split == split)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        self.validate()?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, to_canonical_json(self)? + "\n")?;
        Ok(path)
    }

    /// Accepts the manifest file itself or its directory.
    pub fn read(path: &Path) -> Result<(Manifest, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        m.validate()?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn load_pairs(&self, dir: &Path, split: Split) -> Result<Vec<SlicePair>> {
        let scale = self
            .scale
            .ok_or_else(|| Error::Data("manifest has no low-resolution inputs; run degrade first".into()))?;
        self.split(split)
            .map(|s| {
                let lr_rel = s.lr.as_ref().ok_or_else(|| Error::Data(format!("{}: no lr path", s.name)))?;
                let hr: Tensor<f32> = srt::read(&dir.join(&s.hr))?;
                let lr: Tensor<f32> = srt::read(&dir.join(lr_rel))?;
                let (hs, ls) = (hr.shape(), lr.shape());
                if hs.len() != 3 || ls.len() != 3 || hs[0] != ls[0] * scale || hs[1] != ls[1] * scale {
                    return Err(Error::Data(format!("{}: shapes {hs:?} and {ls:?} disagree with scale {scale}", s.name)));
                }
                Ok(SlicePair {
                    name: s.name.clone(),
                    hr,
                    lr,
                    scale,
                    norm_max: s.norm_max,
                })
            })
            .collect()
    }
}
