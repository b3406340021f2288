//! MMTE binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MMTE" | version: u32 = 1 | dtype: u8 | ndim: u32 | dims: u64 × ndim | elements
//! ```
//!
//! dtype 0 stores 32-bit floats and is what every writer here emits unless
//! asked otherwise; dtype 1 stores 64-bit floats for values that do not fit
//! 32 bits exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const MAGIC: &[u8; 4] = b"MMTE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

#[derive(Debug, Error)]
pub enum MmteError {
    #[error("not an MMTE stream (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported MMTE version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported MMTE dtype {0}")]
    UnsupportedDtype(u8),
    #[error("MMTE stream truncated")]
    Truncated,
    #[error("MMTE payload invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), MmteError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => MmteError::Truncated,
        _ => MmteError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, MmteError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, MmteError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Smallest dtype that stores every value exactly.
pub fn exact_dtype(values: &[f64]) -> Dtype {
    if values.iter().all(|&v| (v as f32) as f64 == v) {
        Dtype::F32
    } else {
        Dtype::F64
    }
}

pub fn write_mmte<W: Write>(w: &mut W, shape: &[usize], values: &[f64], dtype: Dtype) -> Result<(), MmteError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype as u8])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match dtype {
        Dtype::F32 => {
            for &v in values {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_mmte<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f64>), MmteError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(MmteError::BadMagic(magic));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(MmteError::UnsupportedVersion(version));
    }
    let mut dt = [0u8; 1];
    read_exact(r, &mut dt)?;
    let dtype = match dt[0] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(MmteError::UnsupportedDtype(other)),
    };
    let ndim = read_u32(r)? as usize;
    if ndim > 16 {
        return Err(MmteError::Invalid(format!("implausible rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| MmteError::Invalid("element count overflows".into()))?;
    let width = if dtype == Dtype::F32 { 4 } else { 8 };
    let mut bytes = Vec::new();
    r.take((count * width) as u64).read_to_end(&mut bytes)?;
    if bytes.len() != count * width {
        return Err(MmteError::Truncated);
    }
    let values = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    Ok((shape, values))
}

/// Serialize a tensor, choosing 32-bit storage whenever it is lossless.
pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let data = t.data();
    let mut out = Vec::with_capacity(32 + data.len() * 4);
    write_mmte(&mut out, t.shape(), &data, exact_dtype(&data)).expect("writing to a Vec cannot fail");
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor, MmteError> {
    let (shape, values) = read_mmte(&mut &bytes[..])?;
    Tensor::new(&shape, values).map_err(|e| MmteError::Invalid(e.to_string()))
}

/// Write a tensor as 32-bit MMTE (the interchange dtype).
pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<(), MmteError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mmte(&mut w, t.shape(), &t.data(), Dtype::F32)?;
    w.flush()?;
    Ok(())
}

pub fn save_values(path: impl AsRef<Path>, shape: &[usize], values: &[f64]) -> Result<(), MmteError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mmte(&mut w, shape, values, Dtype::F32)?;
    w.flush()?;
    Ok(())
}

pub fn load_values(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>), MmteError> {
    let mut r = BufReader::new(File::open(path)?);
    read_mmte(&mut r)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor, MmteError> {
    let (shape, values) = load_values(path)?;
    Tensor::new(&shape, values).map_err(|e| MmteError::Invalid(e.to_string()))
}
