use std::io::Write;

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;
use crate::signal::CandidatePixel;

/// Imaging result for one frame: one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameProduct {
    pub angle_index: u32,
    mask: Vec<u8>,
    gray: Vec<f64>,
    distance: Vec<f64>,
}

impl FrameProduct {
    /// Applies the mask to the candidates: gray and distance are zeroed
    /// wherever the mask bit is 0.
    pub fn new(angle_index: u32, candidates: &[CandidatePixel], mask: Vec<u8>) -> Result<Self> {
        if candidates.len() != mask.len() {
            return Err(Error::LengthMismatch {
                expected: mask.len(),
                actual: candidates.len(),
            });
        }
        if mask.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        let pick = |b: u8, v: f64| if b == 1 { v } else { 0.0 };
        Ok(Self {
            angle_index,
            gray: candidates.iter().zip(&mask).map(|(c, &b)| pick(b, c.gray)).collect(),
            distance: candidates.iter().zip(&mask).map(|(c, &b)| pick(b, c.distance)).collect(),
            mask,
        })
    }

    pub fn rows(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn gray(&self) -> &[f64] {
        &self.gray
    }

    pub fn distance(&self) -> &[f64] {
        &self.distance
    }
}

/// Mask, gray and distance maps for a set of frames, stored frame-major:
/// entry `(i, j)` is frame `i`, row `j`. Previews are drawn transposed, one
/// image column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingProduct {
    mask: BinaryMask,
    gray: Vec<f64>,
    distance: Vec<f64>,
    angles: Vec<u32>,
}

impl ImagingProduct {
    pub fn from_frames(frames: Vec<FrameProduct>) -> Result<Self> {
        let rows = frames.first().map_or(0, FrameProduct::rows);
        if let Some(f) = frames.iter().find(|f| f.rows() != rows) {
            return Err(Error::LengthMismatch {
                expected: rows,
                actual: f.rows(),
            });
        }
        let n = frames.len();
        let mut bits = Vec::with_capacity(n * rows);
        let mut gray = Vec::with_capacity(n * rows);
        let mut distance = Vec::with_capacity(n * rows);
        let mut angles = Vec::with_capacity(n);
        for f in frames {
            bits.extend(f.mask);
            gray.extend(f.gray);
            distance.extend(f.distance);
            angles.push(f.angle_index);
        }
        Ok(Self {
            mask: BinaryMask::new(n, rows, bits)?,
            gray,
            distance,
            angles,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.mask.rows()
    }

    pub fn rows(&self) -> usize {
        self.mask.cols()
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn gray(&self) -> &[f64] {
        &self.gray
    }

    pub fn distance(&self) -> &[f64] {
        &self.distance
    }

    pub fn angles(&self) -> &[u32] {
        &self.angles
    }

    /// True when every zero mask bit has zero gray and zero distance.
    pub fn masking_holds(&self) -> bool {
        self.mask
            .bits()
            .iter()
            .zip(self.gray.iter().zip(&self.distance))
            .all(|(&b, (&g, &d))| b == 1 || (g == 0.0 && d == 0.0))
    }

    pub fn write_mask_pgm<W: Write>(&self, out: W) -> std::io::Result<()> {
        let v: Vec<f64> = self.mask.bits().iter().map(|&b| f64::from(b)).collect();
        write_pgm(out, self.n_frames(), self.rows(), &v)
    }

    pub fn write_gray_pgm<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_pgm(out, self.n_frames(), self.rows(), &self.gray)
    }

    pub fn write_distance_pgm<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_pgm(out, self.n_frames(), self.rows(), &self.distance)
    }
}

/// Binary PGM (P5) of a frame-major `frames × rows` matrix drawn as `rows`
/// tall and `frames` wide, min-max scaled to 0..=255. A constant matrix is
/// drawn black.
pub fn write_pgm<W: Write>(mut out: W, frames: usize, rows: usize, values: &[f64]) -> std::io::Result<()> {
    assert_eq!(values.len(), frames * rows, "matrix size");
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    write!(out, "P5\n{frames} {rows}\n255\n")?;
    let mut line = vec![0u8; frames];
    for j in 0..rows {
        for (i, px) in line.iter_mut().enumerate() {
            let v = values[i * rows + j];
            *px = if span > 0.0 {
                ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
        }
        out.write_all(&line)?;
    }
    Ok(())
}
