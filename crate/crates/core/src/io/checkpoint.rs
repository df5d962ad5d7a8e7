use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_crc, read_bytes, write_bytes, Cursor, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Scale};
use crate::neural::Tensor2;

const MAGIC: &[u8; 4] = b"SNKW";

/// JSON block stored after the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub scale: Option<Scale>,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub val_f1: Option<f64>,
}

/// Weights plus metadata. Tensors are stored as f32, so values written from
/// f64 are rounded once on save.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Checks that the stored tensors match the stored configuration.
    pub fn validate(&self) -> Result<()> {
        self.meta.model.validate()?;
        self.params.check_layout(&self.meta.model)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(ck.params.len())
        .map_err(|_| Error::InvalidArgument("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in ck.params.iter() {
        let name_len = u32::try_from(name.len())
            .map_err(|_| Error::InvalidArgument("tensor name too long".into()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_vec(&ck.meta)?;
    let json_len =
        u32::try_from(json.len()).map_err(|_| Error::InvalidArgument("metadata too large".into()))?;
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: 4,
            available: bytes.len() as u64,
        });
    }
    let mut c = Cursor::new(bytes, path);
    c.magic(MAGIC)?;
    c.version()?;
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| c.malformed("tensor name is not UTF-8"))?
            .to_string();
        let rows = c.u64()?;
        let cols = c.u64()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| c.malformed(format!("tensor {name} is too large")))?;
        let raw = c.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        entries.push((name, Tensor2::new(rows as usize, cols as usize, data)?));
    }
    let json_len = c.u32()? as usize;
    let json = c.take(json_len)?;
    let body_end = c.pos();
    let stored = c.u32()?;
    if c.remaining() != 0 {
        return Err(c.malformed(format!("{} trailing bytes", c.remaining())));
    }
    check_crc(path, stored, &bytes[..body_end])?;
    let meta: CheckpointMeta =
        serde_json::from_slice(json).map_err(|e| c.malformed(format!("metadata: {e}")))?;
    let params = ModelParams::from_entries(entries).map_err(|e| c.malformed(e.to_string()))?;
    Ok(Checkpoint { meta, params })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    write_bytes(path.as_ref(), &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ck = decode_checkpoint(&read_bytes(path)?, path)?;
    ck.validate().map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(ck)
}
