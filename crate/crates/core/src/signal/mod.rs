//! Classical signal processing for streak-tube echo rows.
//!
//! Everything here is a pure function of its inputs. The frequency-domain
//! pipeline is: zero-pad and transform ([`SpectralEngine::fft_truncate`]),
//! split into real/imaginary halves ([`ieo`]), filter ([`apply_filter`]),
//! recombine ([`iieo`]), correlate with a template
//! ([`SpectralEngine::matched_filter`]) and reduce to a candidate pixel
//! ([`candidate_pixel`]).

mod fft;
mod filter;
mod mfunc;
mod otsu;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fft::{fft_truncate, matched_filter, SpectralEngine};
pub use filter::{apply_filter, ideal_bandpass};
pub use mfunc::{m_function, MFunctionParams};
pub use otsu::otsu_threshold;

/// Speed of light in vacuum, m/s.
pub const LIGHT_SPEED: f64 = 299_792_458.0;

/// Sampling geometry of one streak-tube row and its spectral representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Samples per row (N_s).
    pub n_samples: usize,
    /// Full-screen scan time, seconds.
    pub t_full: f64,
    /// Transform length after zero padding.
    pub n_fft: usize,
    /// Number of retained low-frequency bins (L).
    pub l_cut: usize,
    /// Range-gate delay t_G, seconds.
    pub gate_delay: f64,
    pub refractive_index: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 2048,
            t_full: 30e-9,
            n_fft: 65536,
            l_cut: 4000,
            gate_delay: 0.0,
            refractive_index: 1.333,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(self.t_full.is_finite() && self.t_full > 0.0) {
            return Err(Error::Config("t_full must be positive".into()));
        }
        if self.n_fft < self.n_samples {
            return Err(Error::Config(format!(
                "n_fft ({}) must be >= n_samples ({})",
                self.n_fft, self.n_samples
            )));
        }
        // l_cut == n_fft is accepted so that a full-band round trip is expressible.
        if self.l_cut == 0 || self.l_cut > self.n_fft {
            return Err(Error::Config(format!(
                "l_cut ({}) must be in 1..={}",
                self.l_cut, self.n_fft
            )));
        }
        if !self.gate_delay.is_finite() {
            return Err(Error::Config("gate_delay must be finite".into()));
        }
        if !(self.refractive_index.is_finite() && self.refractive_index > 0.0) {
            return Err(Error::Config("refractive_index must be positive".into()));
        }
        Ok(())
    }

    /// f_s = N_s / T_full.
    pub fn sample_rate(&self) -> f64 {
        self.n_samples as f64 / self.t_full
    }

    /// ΔR_f = f_s / N_FFT.
    pub fn freq_resolution(&self) -> f64 {
        self.sample_rate() / self.n_fft as f64
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.freq_resolution()
    }

    /// Upper edge of the retained band, l_cut·ΔR_f.
    pub fn max_frequency(&self) -> f64 {
        self.l_cut as f64 * self.freq_resolution()
    }

    /// Propagation speed in the medium, c/n.
    pub fn medium_speed(&self) -> f64 {
        LIGHT_SPEED / self.refractive_index
    }

    /// Length of an [`ExpandedSpectrum`] for this configuration.
    pub fn expanded_len(&self) -> usize {
        2 * self.l_cut
    }
}

/// A sampled light-intensity row.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal(Vec<f64>);

impl TimeSignal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(samples))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for TimeSignal {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The first `l_cut` bins of a zero-padded transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub bins: Vec<Complex64>,
    pub freq_resolution: f64,
}

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Real vector of length 2L: real parts followed by imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedSpectrum(pub Vec<f64>);

impl ExpandedSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of complex bins (L).
    pub fn half_len(&self) -> usize {
        self.0.len() / 2
    }
}

/// Per-element gains over an expanded spectrum, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    gains: Vec<f64>,
}

impl TransferFunction {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if !gains.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "transfer function length {} is odd",
                gains.len()
            )));
        }
        if let Some(index) = gains
            .iter()
            .position(|g| !(g.is_finite() && (0.0..=1.0).contains(g)))
        {
            return Err(Error::InvalidArgument(format!(
                "gain {} at index {index} outside [0, 1]",
                gains[index]
            )));
        }
        Ok(Self { gains })
    }

    /// Unit gain everywhere.
    pub fn all_pass(len: usize) -> Self {
        Self {
            gains: vec![1.0; len],
        }
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// Imaginary expansion: `[Re(u_0..u_L), Im(u_0..u_L)]`.
pub fn ieo(u: &ComplexSpectrum) -> ExpandedSpectrum {
    let mut values = Vec::with_capacity(2 * u.bins.len());
    values.extend(u.bins.iter().map(|c| c.re));
    values.extend(u.bins.iter().map(|c| c.im));
    ExpandedSpectrum(values)
}

/// Inverse of [`ieo`]: `μ_k = v_k + i·v_{k+L}`.
pub fn iieo(v: &ExpandedSpectrum, freq_resolution: f64) -> Result<ComplexSpectrum> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "expanded spectrum length {} is odd",
            v.len()
        )));
    }
    let (re, im) = v.0.split_at(v.half_len());
    Ok(ComplexSpectrum {
        bins: re
            .iter()
            .zip(im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect(),
        freq_resolution,
    })
}

/// Peak of a filtered row: gray value and range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePixel {
    pub index: usize,
    pub gray: f64,
    pub distance: f64,
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Gray value and distance of the strongest return in `v_f`.
///
/// `t = i/f_s + t_G`, `distance = (c/n)·t/2`.
pub fn candidate_pixel(v_f: &[f64], cfg: &SamplingConfig) -> Result<CandidatePixel> {
    let index = argmax(v_f)
        .ok_or_else(|| Error::InvalidArgument("empty filtered signal".into()))?;
    let t = index as f64 / cfg.sample_rate() + cfg.gate_delay;
    Ok(CandidatePixel {
        index,
        gray: v_f[index],
        distance: cfg.medium_speed() * t / 2.0,
    })
}
