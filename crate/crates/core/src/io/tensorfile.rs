//! Binary tensor container.
//!
//! Layout: `"NALN"`, version `u16`, dtype `u8` (1 = binary32, 2 = binary64),
//! rank `u8`, one `u64` per dimension, then the row-major payload. All
//! integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NALN";
pub const VERSION: u16 = 1;
const FIXED_HEADER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn of<S: Scalar>() -> Self {
        if S::BYTES == 4 {
            DType::F32
        } else {
            DType::F64
        }
    }
}

pub fn encode_tensor<S: Scalar>(tensor: &Tensor<S>) -> Vec<u8> {
    let dtype = DType::of::<S>();
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * tensor.rank() + tensor.numel() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(tensor.rank() as u8);
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => {
            for v in tensor.data() {
                out.extend_from_slice(&v.to_f32().expect("f32 scalar").to_le_bytes());
            }
        }
        DType::F64 => {
            for v in tensor.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    out
}

/// Parses a tensor file image, promoting binary32 payloads to `S`.
///
/// `origin` only labels error messages.
pub fn decode_tensor<S: Scalar>(bytes: &[u8], origin: &Path) -> Result<Tensor<S>> {
    let fail = |msg: String| Error::Format {
        path: origin.to_path_buf(),
        msg,
    };
    if bytes.len() < FIXED_HEADER {
        return Err(fail(format!(
            "header truncated: expected at least {FIXED_HEADER} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let dtype = match bytes[6] {
        1 => DType::F32,
        2 => DType::F64,
        code => return Err(fail(format!("unknown dtype code {code}"))),
    };
    let rank = bytes[7] as usize;
    let header = FIXED_HEADER + 8 * rank;
    if bytes.len() < header {
        return Err(fail(format!(
            "header truncated: expected {header} bytes for rank {rank}, got {}",
            bytes.len()
        )));
    }
    let dims: Vec<u64> = bytes[FIXED_HEADER..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let payload = dims
        .iter()
        .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| fail(format!("dims {dims:?} overflow the addressable size")))?;
    let actual = bytes.len() - header;
    if actual != payload {
        let kind = if actual < payload { "truncated" } else { "has trailing bytes" };
        return Err(fail(format!(
            "payload {kind}: expected {payload} bytes, got {actual}"
        )));
    }
    let body = &bytes[header..];
    let data: Vec<S> = match dtype {
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| S::of(f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64))
            .collect(),
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect(),
    };
    let dims: Vec<usize> = dims.into_iter().map(|d| d as usize).collect();
    Tensor::new(dims, data).map_err(|e| fail(e.to_string()))
}

pub fn write_tensor<S: Scalar>(path: &Path, tensor: &Tensor<S>) -> Result<()> {
    super::write_file(path, encode_tensor(tensor))
}

/// Reads any tensor file as binary64.
pub fn read_tensor(path: &Path) -> Result<Tensor<f64>> {
    read_tensor_as(path)
}

pub fn read_tensor_as<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn round_trip_3x4() {
        let t = Tensor::from_fn([3, 4], |i| (i as f64).sin() * 1e3);
        let back: Tensor<f64> = decode_tensor(&encode_tensor(&t), origin()).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new([2], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode_tensor(&t);
        assert_eq!(&bytes[..4], b"NALN");
        assert_eq!(&bytes[4..8], &[1, 0, 1, 1]);
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        let promoted: Tensor<f64> = decode_tensor(&bytes, origin()).unwrap();
        assert_eq!(promoted.data(), &[1.0, -2.0]);
    }

    #[test]
    fn empty_dims_are_legal() {
        let t = Tensor::<f64>::new([0], vec![]).unwrap();
        let back: Tensor<f64> = decode_tensor(&encode_tensor(&t), origin()).unwrap();
        assert_eq!(back.dims(), &[0]);
        assert_eq!(back.numel(), 0);
    }

    #[test]
    fn corruptions_are_format_errors() {
        let good = encode_tensor(&Tensor::from_fn([2, 3], |i| i as f64));
        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0xff;
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        let mut bad_dtype = good.clone();
        bad_dtype[6] = 7;
        let mut bad_rank = good.clone();
        bad_rank[7] = 40;
        let mut huge = good.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        let mut trailing = good.clone();
        trailing.push(0);
        let cases = [
            bad_magic,
            bad_version,
            bad_dtype,
            bad_rank,
            huge,
            trailing,
            good[..5].to_vec(),
            good[..good.len() - 1].to_vec(),
        ];
        for (i, bytes) in cases.iter().enumerate() {
            let err = decode_tensor::<f64>(bytes, origin()).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "case {i}: {err}");
        }
        let err = decode_tensor::<f64>(&good[..good.len() - 8], origin()).unwrap_err();
        assert!(err.to_string().contains("expected 48 bytes, got 40"), "{err}");
    }
}
