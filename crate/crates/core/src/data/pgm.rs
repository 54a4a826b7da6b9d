//! Binary PGM (`P5`). Writing always uses 16-bit big-endian samples;
//! reading accepts 8- or 16-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// `(H, W, 1)` in `[0, 1]` (clamped) → 16-bit PGM bytes.
pub fn encode_pgm16<T: Float>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let &[h, w, 1] = img.shape() else {
        return Err(Error::shape("pgm", img.shape(), &[0, 0, 1]));
    };
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in img.data() {
        let q = (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm16<T: Float>(path: &Path, img: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_pgm16(img)?)?;
    Ok(())
}

fn header_tokens(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    // Magic, width, height, maxval; '#' comments run to end of line.
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut magic = None;
    while tokens.len() < 3 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("pgm: truncated header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::Format("pgm: bad header".into()))?;
        if magic.is_none() {
            if tok != "P5" {
                return Err(Error::Format(format!("pgm: magic {tok:?}, expected P5")));
            }
            magic = Some(());
            continue;
        }
        tokens.push(tok.parse().map_err(|_| Error::Format(format!("pgm: bad header field {tok:?}")))?);
    }
    // Exactly one whitespace byte separates the header from the samples.
    Ok((tokens, i + 1))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, start) = header_tokens(bytes)?;
    let (w, h, maxval) = (t[0], t[1], t[2]);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("pgm: invalid header {w}x{h} max {maxval}")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let body = bytes.get(start..start + w * h * bps).ok_or_else(|| Error::Format("pgm: truncated samples".into()))?;
    let data = if bps == 1 {
        body.iter().map(|&b| b as f32 / maxval as f32).collect()
    } else {
        body.chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f32 / maxval as f32)
            .collect()
    };
    Tensor::new(vec![h, w, 1], data)
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    decode_pgm(&fs::read(path)?)
}
