//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "FSNT"          4 bytes
//! version u32             currently 1
//! rank    u32
//! extents u64 x rank
//! dtype   u32             1 = f32, 2 = f64
//! values  dtype x product(extents), little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DType, Real, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"FSNT";
pub const TENSOR_VERSION: u32 = 1;

const MAX_RANK: u32 = 16;

pub fn write_tensor<T: Real, W: Write>(tensor: &Tensor<T>, out: &mut W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * tensor.rank() + tensor.numel() * T::DTYPE.size());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &e in tensor.shape() {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(T::DTYPE as u32).to_le_bytes());
    for &v in tensor.data() {
        v.put_le(&mut buf);
    }
    out.write_all(&buf)
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated while reading {what}"))
        } else {
            Error::Format(format!("{what}: {e}"))
        }
    })
}

pub(crate) fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor. Stored values of the other precision are converted.
pub fn read_tensor<T: Real, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let version = read_u32(input, "version")?;
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    let rank = read_u32(input, "rank")?;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        read_exact(input, &mut b, "extent")?;
        let extent = usize::try_from(u64::from_le_bytes(b))
            .map_err(|_| Error::Format("extent overflows usize".into()))?;
        shape.push(extent);
    }
    let tag = read_u32(input, "dtype")?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let bytes_len = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format("byte count overflows".into()))?;
    // Read incrementally so a corrupt header cannot force a huge allocation.
    let mut bytes = Vec::new();
    let got = input
        .take(bytes_len as u64)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("values: {e}")))?;
    if got != bytes_len {
        return Err(Error::Format(format!(
            "truncated values: expected {bytes_len} bytes, got {got}"
        )));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::get_le(c) as f64))
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::get_le(c)).unwrap_or_else(T::nan))
            .collect(),
    };
    Tensor::new(shape, data)
}

pub fn write_tensor_file<T: Real>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensor(tensor, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut BufReader::new(file))
}
