//! CGHL checkpoint files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! b"CGHL" | version: u32 = 1 | kind: u8 | seed: u64 | epochs: u64
//! | config_len: u32 | config (UTF-8 JSON)
//! | count: u32 | count × (name_len: u32 | name | payload_len: u64 | MMTE payload)
//! ```
//!
//! The tensor table holds every parameter and batch-norm running statistic
//! under the names from [`ModelBundle::named_tensors`]. Payloads use 32-bit
//! MMTE when that is lossless and 64-bit otherwise, so a round trip is exact.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::models::{ModelBundle, ModelError, ModelKind, TrainingMeta};
use crate::tensor::io::{read_mmte, tensor_to_bytes, MmteError};

pub const MAGIC: &[u8; 4] = b"CGHL";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("tensor `{name}`: {source}")]
    Tensor { name: String, source: MmteError },
    #[error("checkpoint does not match its config: {0}")]
    Mismatch(String),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Serialize a bundle to CGHL bytes.
pub fn checkpoint_to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(bundle.kind().tag());
    out.extend_from_slice(&bundle.meta.seed.to_le_bytes());
    out.extend_from_slice(&bundle.meta.epochs.to_le_bytes());
    let config = bundle.config_text();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let tensors = bundle.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let payload = tensor_to_bytes(t);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.0.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::Corrupt("string is not UTF-8".into()))
    }
}

/// Rebuild a bundle from CGHL bytes.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelBundle, CheckpointError> {
    let mut r = Reader(bytes);
    let magic: [u8; 4] = match r.take(4) {
        Ok(m) => m.try_into().expect("4 bytes"),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            if bytes != &MAGIC[..bytes.len()] {
                return Err(CheckpointError::BadMagic(m));
            }
            return Err(CheckpointError::Truncated);
        }
    };
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let tag = r.take(1)?[0];
    let kind = ModelKind::from_tag(tag).ok_or(CheckpointError::UnknownKind(tag))?;
    let meta = TrainingMeta { seed: r.u64()?, epochs: r.u64()? };
    let len = r.u32()? as usize;
    let config = r.string(len)?;
    let bundle = ModelBundle::from_config_text(kind, &config, meta)?;
    let mut slots: HashMap<String, _> = bundle.named_tensors().into_iter().collect();
    let count = r.u32()? as usize;
    if count != slots.len() {
        return Err(CheckpointError::Mismatch(format!("{count} tensors stored, model has {}", slots.len())));
    }
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        let len = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Truncated)?;
        let payload = r.take(len)?;
        let (shape, values) = read_mmte(&mut &payload[..]).map_err(|source| match source {
            MmteError::Truncated => CheckpointError::Truncated,
            source => CheckpointError::Tensor { name: name.clone(), source },
        })?;
        let slot = slots
            .remove(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("unexpected or repeated tensor `{name}`")))?;
        if slot.shape() != shape {
            return Err(CheckpointError::Mismatch(format!(
                "`{name}` stored as {shape:?}, model expects {:?}",
                slot.shape()
            )));
        }
        slot.assign_exact(values).map_err(|e| CheckpointError::Corrupt(format!("`{name}`: {e}")))?;
    }
    if !r.0.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.0.len())));
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&checkpoint_to_bytes(bundle)).map_err(io)?;
    f.sync_all().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle, CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    checkpoint_from_bytes(&bytes)
}
