//! Checkpoint file:
//!
//! ```text
//! "SMCK" | u32 version | u32 header length | header JSON
//! then per parameter: u32 name length | name | SRT tensor
//! ```
//!
//! All integers are little-endian. The header is canonical JSON holding the
//! network config and the training step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::UNetConfig;
use super::model::MambaUNet;
use super::params::ParamStore;
use crate::data::to_canonical_json;
use crate::error::{Error, Result};
use crate::srt;
use crate::tensor::Float;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: UNetConfig,
    pub step: u64,
}

pub fn encode_checkpoint<T: Float>(header: &CheckpointHeader, store: &ParamStore<T>) -> Result<Vec<u8>> {
    let json = to_canonical_json(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&srt::encode(t));
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = bytes
        .get(*pos..*pos + n)
        .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
    *pos += n;
    Ok(s)
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let b = take(bytes, pos, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

/// Parses and validates names and shapes against the layout the stored
/// config describes.
pub fn decode_checkpoint<T: Float>(bytes: &[u8]) -> Result<(CheckpointHeader, MambaUNet, ParamStore<T>)> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = take_u32(bytes, &mut pos)? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version} unsupported")));
    }
    let hlen = take_u32(bytes, &mut pos)?;
    let header: CheckpointHeader = serde_json::from_slice(take(bytes, &mut pos, hlen)?)?;
    let (net, specs) = MambaUNet::layout(&header.config)?;
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    while pos < bytes.len() {
        let n = take_u32(bytes, &mut pos)?;
        let name = std::str::from_utf8(take(bytes, &mut pos, n)?)
            .map_err(|_| Error::Format("checkpoint: parameter name is not UTF-8".into()))?;
        names.push(name.to_string());
        let (t, used) = srt::decode_prefix::<T>(&bytes[pos..])?;
        pos += used;
        tensors.push(t);
    }
    let store = ParamStore::from_parts(names, tensors)?;
    store.check_specs(&specs)?;
    Ok((header, net, store))
}

pub fn save_checkpoint<T: Float>(path: &Path, header: &CheckpointHeader, store: &ParamStore<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(header, store)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<(CheckpointHeader, MambaUNet, ParamStore<T>)> {
    decode_checkpoint(&fs::read(path)?)
}
