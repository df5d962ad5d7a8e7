use crate::error::{Error, Result};
use crate::signal::TimeSignal;

/// One streak-tube capture: rows are spatial positions, columns time samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StreakFrame {
    rows: usize,
    cols: usize,
    pub gate_delay: f64,
    pub angle_index: u32,
    pixels: Vec<f32>,
}

impl StreakFrame {
    pub fn new(rows: usize, cols: usize, gate_delay: f64, angle_index: u32, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: pixels.len(),
            });
        }
        if let Some(index) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !gate_delay.is_finite() {
            return Err(Error::InvalidArgument("gate delay must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            gate_delay,
            angle_index,
            pixels,
        })
    }

    pub fn zeros(rows: usize, cols: usize, gate_delay: f64, angle_index: u32) -> Self {
        Self {
            rows,
            cols,
            gate_delay,
            angle_index,
            pixels: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.pixels[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.pixels[r * self.cols..(r + 1) * self.cols]
    }

    /// Row `r` widened to `f64`.
    pub fn signal(&self, r: usize) -> TimeSignal {
        TimeSignal::new(self.row(r).iter().map(|&v| f64::from(v)).collect())
            .expect("frame pixels are finite")
    }
}

/// Dense 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: bits.len(),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.bits[r * self.cols + c] = u8::from(on);
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}
