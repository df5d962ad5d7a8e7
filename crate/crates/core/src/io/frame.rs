use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use super::{dim_u32, read_bytes, write_bytes, Cursor, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::imaging::StreakFrame;

pub const FRAME_HEADER_LEN: usize = 32;
const MAGIC: &[u8; 4] = b"SNKF";

fn payload(frame: &StreakFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.pixels().len() * 4);
    for v in frame.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// CRC32 state seeded with the header fields between the version and the
/// checksum; the checksum covers those and the payload.
fn header_hasher(rows: u32, cols: u32, gate_delay: f64, angle_index: u32) -> crc32fast::Hasher {
    let mut h = crc32fast::Hasher::new();
    h.update(&rows.to_le_bytes());
    h.update(&cols.to_le_bytes());
    h.update(&gate_delay.to_le_bytes());
    h.update(&angle_index.to_le_bytes());
    h
}

pub fn encode_frame(frame: &StreakFrame) -> Result<Vec<u8>> {
    let here = Path::new("<memory>");
    let body = payload(frame);
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let rows = dim_u32(here, "rows", frame.rows())?;
    let cols = dim_u32(here, "cols", frame.cols())?;
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&frame.gate_delay.to_le_bytes());
    out.extend_from_slice(&frame.angle_index.to_le_bytes());
    let mut crc = header_hasher(rows, cols, frame.gate_delay, frame.angle_index);
    crc.update(&body);
    out.extend_from_slice(&crc.finalize().to_le_bytes());
    debug_assert_eq!(out.len(), FRAME_HEADER_LEN);
    out.extend_from_slice(&body);
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Header {
    rows: usize,
    cols: usize,
    gate_delay: f64,
    angle_index: u32,
    crc: u32,
}

fn parse_header(c: &mut Cursor) -> Result<Header> {
    c.magic(MAGIC)?;
    c.version()?;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let gate_delay = c.f64()?;
    let angle_index = c.u32()?;
    let crc = c.u32()?;
    Ok(Header {
        rows,
        cols,
        gate_delay,
        angle_index,
        crc,
    })
}

fn decode_pixels(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect()
}

pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<StreakFrame> {
    let mut c = Cursor::new(bytes, path);
    let h = parse_header(&mut c)?;
    let n = (h.rows as u64) * (h.cols as u64) * 4;
    let body = c.take(usize::try_from(n).map_err(|_| c.malformed("payload too large"))?)?;
    if c.remaining() != 0 {
        return Err(c.malformed(format!("{} trailing bytes", c.remaining())));
    }
    let mut crc = header_hasher(h.rows as u32, h.cols as u32, h.gate_delay, h.angle_index);
    crc.update(body);
    let computed = crc.finalize();
    if computed != h.crc {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored: h.crc,
            computed,
        });
    }
    StreakFrame::new(h.rows, h.cols, h.gate_delay, h.angle_index, decode_pixels(body))
        .map_err(|e| c.malformed(e.to_string()))
}

pub fn write_frame(path: impl AsRef<Path>, frame: &StreakFrame) -> Result<()> {
    write_bytes(path.as_ref(), &encode_frame(frame)?)
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<StreakFrame> {
    let path = path.as_ref();
    decode_frame(&read_bytes(path)?, path)
}

/// Row-at-a-time access to an `SNKF` file without loading the payload.
#[derive(Debug)]
pub struct FrameReader {
    path: PathBuf,
    file: BufReader<File>,
    header: Header,
}

impl FrameReader {
    /// Reads the header and checks the file length; the payload checksum is
    /// checked by [`FrameReader::verify`].
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut head = vec![0u8; FRAME_HEADER_LEN.min(len as usize)];
        file.read_exact(&mut head).map_err(|e| Error::io(&path, e))?;
        let header = parse_header(&mut Cursor::new(&head, &path))?;
        let needed = FRAME_HEADER_LEN as u64 + header.rows as u64 * header.cols as u64 * 4;
        if len < needed {
            return Err(Error::Truncated {
                path,
                needed,
                available: len,
            });
        }
        if len > needed {
            return Err(Error::Malformed {
                reason: format!("{} trailing bytes", len - needed),
                path,
            });
        }
        Ok(Self {
            path,
            file: BufReader::new(file),
            header,
        })
    }

    pub fn rows(&self) -> usize {
        self.header.rows
    }

    pub fn cols(&self) -> usize {
        self.header.cols
    }

    pub fn gate_delay(&self) -> f64 {
        self.header.gate_delay
    }

    pub fn angle_index(&self) -> u32 {
        self.header.angle_index
    }

    /// Streams the header fields and payload through CRC32 and compares
    /// with the stored checksum.
    pub fn verify(&mut self) -> Result<()> {
        self.file
            .seek(SeekFrom::Start(FRAME_HEADER_LEN as u64))
            .map_err(|e| Error::io(&self.path, e))?;
        let h = &self.header;
        let mut hasher = header_hasher(h.rows as u32, h.cols as u32, h.gate_delay, h.angle_index);
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = self.file.read(&mut buf).map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        let computed = hasher.finalize();
        if computed != self.header.crc {
            return Err(Error::Checksum {
                path: self.path.clone(),
                stored: self.header.crc,
                computed,
            });
        }
        Ok(())
    }

    pub fn read_row(&mut self, r: usize) -> Result<Vec<f32>> {
        if r >= self.header.rows {
            return Err(Error::InvalidArgument(format!(
                "row {r} out of range for {} rows",
                self.header.rows
            )));
        }
        let width = self.header.cols * 4;
        let offset = FRAME_HEADER_LEN as u64 + (r * width) as u64;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; width];
        self.file.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        let row = decode_pixels(&buf);
        if let Some(index) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(row)
    }
}
