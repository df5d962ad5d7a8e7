use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{ComplexSpectrum, SamplingConfig, TimeSignal};
use crate::error::{Error, Result};

/// Planned forward/inverse transforms for one [`SamplingConfig`].
///
/// Forward transforms are unnormalized; the inverse is scaled by `1/n_fft`.
/// Cheap to share across threads.
pub struct SpectralEngine {
    cfg: SamplingConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    twiddles: OnceLock<Vec<Complex64>>,
}

impl std::fmt::Debug for SpectralEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralEngine")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl SpectralEngine {
    pub fn new(cfg: SamplingConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
            twiddles: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.cfg
    }

    /// Zero-pad to `n_fft`, transform, keep bins `[0, l_cut)`.
    pub fn fft_truncate(&self, signal: &[f64]) -> Result<ComplexSpectrum> {
        if signal.len() > self.cfg.n_fft {
            return Err(Error::InvalidArgument(format!(
                "signal length {} exceeds n_fft {}",
                signal.len(),
                self.cfg.n_fft
            )));
        }
        if let Some(index) = signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
        for (b, &s) in buf.iter_mut().zip(signal) {
            b.re = s;
        }
        self.forward.process(&mut buf);
        buf.truncate(self.cfg.l_cut);
        Ok(ComplexSpectrum {
            bins: buf,
            freq_resolution: self.cfg.freq_resolution(),
        })
    }

    /// Frequency-domain matched filter.
    ///
    /// Multiplies the two truncated spectra (conjugating the template when
    /// `conjugate_template` is set), places the product in bins `[0, L)` of an
    /// `n_fft` buffer, inverts, and keeps the real part of the first
    /// `n_samples` outputs.
    pub fn matched_filter(
        &self,
        echo: &ComplexSpectrum,
        template: &ComplexSpectrum,
        conjugate_template: bool,
    ) -> Result<TimeSignal> {
        if echo.len() != template.len() {
            return Err(Error::LengthMismatch {
                expected: echo.len(),
                actual: template.len(),
            });
        }
        if echo.len() > self.cfg.n_fft {
            return Err(Error::InvalidArgument(format!(
                "spectrum length {} exceeds n_fft {}",
                echo.len(),
                self.cfg.n_fft
            )));
        }
        let product: Vec<Complex64> = echo
            .bins
            .iter()
            .zip(&template.bins)
            .map(|(&e, &t)| if conjugate_template { e * t.conj() } else { e * t })
            .collect();

        let n_out = self.cfg.n_samples;
        let nonzero = product.iter().filter(|p| p.re != 0.0 || p.im != 0.0).count();
        let fft_cost = self.cfg.n_fft * (usize::BITS - self.cfg.n_fft.leading_zeros()) as usize;
        let samples = if nonzero * n_out <= fft_cost {
            self.synthesize_sparse(&product, n_out)
        } else {
            let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
            buf[..product.len()].copy_from_slice(&product);
            self.inverse.process(&mut buf);
            let scale = 1.0 / self.cfg.n_fft as f64;
            buf[..n_out].iter().map(|c| c.re * scale).collect()
        };
        TimeSignal::new(samples)
    }

    /// Direct inverse DFT restricted to the nonzero bins, used when a
    /// narrow filter leaves only a handful of them.
    fn synthesize_sparse(&self, product: &[Complex64], n_out: usize) -> Vec<f64> {
        let n = self.cfg.n_fft;
        let twiddles = self.twiddles.get_or_init(|| {
            (0..n)
                .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / n as f64))
                .collect()
        });
        let active: Vec<(usize, Complex64)> = product
            .iter()
            .enumerate()
            .filter(|(_, p)| p.re != 0.0 || p.im != 0.0)
            .map(|(k, &p)| (k, p))
            .collect();
        let scale = 1.0 / n as f64;
        (0..n_out)
            .map(|t| {
                let mut acc = 0.0;
                for &(k, p) in &active {
                    let w = twiddles[(k * t) % n];
                    acc += p.re * w.re - p.im * w.im;
                }
                acc * scale
            })
            .collect()
    }
}

/// One-shot [`SpectralEngine::fft_truncate`].
pub fn fft_truncate(signal: &TimeSignal, cfg: &SamplingConfig) -> Result<ComplexSpectrum> {
    SpectralEngine::new(*cfg)?.fft_truncate(signal.samples())
}

/// One-shot [`SpectralEngine::matched_filter`].
pub fn matched_filter(
    echo: &ComplexSpectrum,
    template: &ComplexSpectrum,
    cfg: &SamplingConfig,
    conjugate_template: bool,
) -> Result<TimeSignal> {
    SpectralEngine::new(*cfg)?.matched_filter(echo, template, conjugate_template)
}
