//! SRT binary tensor format.
//!
//! Layout: magic `SRT1`, one dtype byte (0 = f32, 1 = f64), one rank byte,
//! `rank` little-endian u32 extents, then the little-endian payload in
//! row-major order. Checkpoints and dataset slices are stored this way.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, DType, Float, Tensor};

pub const MAGIC: &[u8; 4] = b"SRT1";

pub fn encode<T: Float>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * tensor.rank() + T::DTYPE.size() * tensor.len());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(tensor.rank() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed. The stored dtype must match `T`.
pub fn decode_prefix<T: Float>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SRT1 magic".into()));
    }
    let dtype = DType::from_code(bytes[4])?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "stored dtype {dtype:?} does not match requested {:?}",
            T::DTYPE
        )));
    }
    let rank = bytes[5] as usize;
    let mut pos = 6;
    if bytes.len() < pos + 4 * rank {
        return Err(Error::Format("truncated SRT header".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        shape.push(d);
        pos += 4;
    }
    let n = numel(&shape);
    let width = dtype.size();
    if bytes.len() < pos + n * width {
        return Err(Error::Format(format!(
            "truncated SRT payload: need {} bytes, have {}",
            n * width,
            bytes.len() - pos
        )));
    }
    let data = bytes[pos..pos + n * width].chunks_exact(width).map(T::read_le).collect();
    pos += n * width;
    let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
    Ok((t, pos))
}

pub fn decode<T: Float>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after SRT tensor", bytes.len() - used)));
    }
    Ok(t)
}

/// Peeks at the dtype stored in an SRT blob.
pub fn dtype_of(bytes: &[u8]) -> Result<DType> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SRT1 magic".into()));
    }
    DType::from_code(bytes[4])
}

pub fn write<T: Float>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(tensor))?;
    Ok(())
}

pub fn read<T: Float>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())
        .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?
        .read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Reads either dtype and converts to `T`.
pub fn read_any<T: Float>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
    match dtype_of(&bytes)? {
        DType::F32 => Ok(decode::<f32>(&bytes)?.cast()),
        DType::F64 => Ok(decode::<f64>(&bytes)?.cast()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"SRT1".to_vec();
        expected.extend_from_slice(&[0, 2]);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let t = Tensor::<f64>::ones(&[3]);
        let bytes = encode(&t);
        assert!(decode::<f32>(&bytes).is_err());
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode::<f64>(b"NOPE").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n = numel(&shape);
            let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64) * 0.37 - 100.0).collect();
            let t = Tensor::<f64>::new(shape, data).unwrap();
            prop_assert_eq!(decode::<f64>(&encode(&t)).unwrap(), t.clone());
            let t32: Tensor<f32> = t.cast();
            prop_assert_eq!(decode::<f32>(&encode(&t32)).unwrap(), t32);
        }
    }
}
