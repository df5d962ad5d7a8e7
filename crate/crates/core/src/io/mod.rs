//! On-disk formats: `SNKF` frames, `SNKL` bit-packed masks, `SNKW`
//! checkpoints, and the JSON dataset manifest.
//!
//! All integers and floats are little-endian.
//!
//! `SNKF` (32-byte header, then `rows·cols` f32 row-major):
//!
//! | offset | type  | field                       |
//! |--------|-------|-----------------------------|
//! | 0      | [u8;4]| `SNKF`                      |
//! | 4      | u32   | version (1)                 |
//! | 8      | u32   | rows                        |
//! | 12     | u32   | cols                        |
//! | 16     | f64   | gate delay, seconds         |
//! | 24     | u32   | angle index                 |
//! | 28     | u32   | CRC32 of 8..28 + payload    |
//!
//! `SNKL` (20-byte header, then `rows·⌈cols/8⌉` bytes, MSB first):
//! magic, version, rows, cols, CRC32 of rows, cols and the payload.
//!
//! `SNKW`: magic, version u32, tensor count u32, then per tensor
//! `name_len u32, name, rows u64, cols u64, rows·cols f32`; then
//! `json_len u32, json`; finally CRC32 u32 of every preceding byte.

mod checkpoint;
mod dataset;
mod frame;
mod labels;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta,
};
pub use dataset::{
    assign_splits, file_crc32, Dataset, FileEntry, FileRole, Manifest, RngInfo, Sample, SampleRef, SampleStream, SplitInfo, SplitRole,
    MANIFEST_NAME, MANIFEST_VERSION,
};
pub use frame::{decode_frame, encode_frame, read_frame, write_frame, FrameReader, FRAME_HEADER_LEN};
pub use labels::{decode_labels, encode_labels, read_labels, write_labels, LABEL_HEADER_LEN};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte slice with truncation errors.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: (self.pos as u64).saturating_add(n as u64),
                available: self.bytes.len() as u64,
            }),
        }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if &found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: self.path.to_path_buf(),
                version,
            });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_crc(path: &Path, stored: u32, data: &[u8]) -> Result<()> {
    let computed = crc32fast::hash(data);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    Ok(())
}

pub(crate) fn dim_u32(path: &Path, what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        reason: format!("{what} {v} exceeds u32"),
    })
}
