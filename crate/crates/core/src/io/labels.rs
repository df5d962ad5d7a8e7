use std::path::Path;

use super::{dim_u32, read_bytes, write_bytes, Cursor, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

pub const LABEL_HEADER_LEN: usize = 20;
const MAGIC: &[u8; 4] = b"SNKL";

fn row_bytes(cols: usize) -> usize {
    cols.div_ceil(8)
}

/// CRC32 over the dimensions and the packed rows.
fn checksum(rows: u32, cols: u32, body: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&rows.to_le_bytes());
    h.update(&cols.to_le_bytes());
    h.update(body);
    h.finalize()
}

pub fn encode_labels(mask: &BinaryMask) -> Result<Vec<u8>> {
    let here = Path::new("<memory>");
    let stride = row_bytes(mask.cols());
    let mut body = vec![0u8; stride * mask.rows()];
    for r in 0..mask.rows() {
        let dst = &mut body[r * stride..(r + 1) * stride];
        for (c, &b) in mask.row(r).iter().enumerate() {
            dst[c / 8] |= b << (7 - c % 8);
        }
    }
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let rows = dim_u32(here, "rows", mask.rows())?;
    let cols = dim_u32(here, "cols", mask.cols())?;
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&checksum(rows, cols, &body).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<BinaryMask> {
    let mut c = Cursor::new(bytes, path);
    c.magic(MAGIC)?;
    c.version()?;
    let (rows32, cols32) = (c.u32()?, c.u32()?);
    let (rows, cols) = (rows32 as usize, cols32 as usize);
    let crc = c.u32()?;
    let stride = row_bytes(cols);
    let body = c.take(rows * stride)?;
    if c.remaining() != 0 {
        return Err(c.malformed(format!("{} trailing bytes", c.remaining())));
    }
    let computed = checksum(rows32, cols32, body);
    if computed != crc {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored: crc,
            computed,
        });
    }
    let mut bits = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let src = &body[r * stride..(r + 1) * stride];
        if cols % 8 != 0 && src[stride - 1] & (0xFF >> (cols % 8)) != 0 {
            return Err(c.malformed(format!("row {r} has bits set past column {cols}")));
        }
        bits.extend((0..cols).map(|col| (src[col / 8] >> (7 - col % 8)) & 1));
    }
    BinaryMask::new(rows, cols, bits)
}

pub fn write_labels(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_bytes(path.as_ref(), &encode_labels(mask)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    decode_labels(&read_bytes(path)?, path)
}
