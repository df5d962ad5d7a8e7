use super::{ExpandedSpectrum, SamplingConfig, TransferFunction};
use crate::error::{Error, Result};

/// Frequency in bins, snapped to the nearest integer when within rounding
/// noise of it so that band edges like 450 MHz / ΔR_f = 432 land exactly.
fn bin_position(freq: f64, resolution: f64) -> f64 {
    let x = freq / resolution;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Binary band-pass over an expanded spectrum.
///
/// Bin `i` passes iff `i·ΔR_f ∈ [f_lo, f_hi]`; the same mask applies to the
/// real half and the imaginary half.
pub fn ideal_bandpass(cfg: &SamplingConfig, f_lo: f64, f_hi: f64) -> Result<TransferFunction> {
    cfg.validate()?;
    let res = cfg.freq_resolution();
    let f_max = cfg.max_frequency();
    if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo < 0.0 || f_lo >= f_hi {
        return Err(Error::InvalidArgument(format!(
            "band [{f_lo}, {f_hi}] Hz is empty or inverted"
        )));
    }
    if bin_position(f_hi, res) > cfg.l_cut as f64 + 1e-9 && f_hi > f_max {
        return Err(Error::InvalidArgument(format!(
            "band upper edge {f_hi} Hz exceeds retained range {f_max} Hz"
        )));
    }
    let lo = bin_position(f_lo, res).ceil() as usize;
    let hi = (bin_position(f_hi, res).floor() as usize).min(cfg.l_cut - 1);
    let l = cfg.l_cut;
    let mut gains = vec![0.0; 2 * l];
    if lo <= hi {
        for i in lo..=hi {
            gains[i] = 1.0;
            gains[i + l] = 1.0;
        }
    }
    TransferFunction::new(gains)
}

/// Elementwise product `u ⊙ h`.
pub fn apply_filter(u: &ExpandedSpectrum, h: &TransferFunction) -> Result<ExpandedSpectrum> {
    if u.len() != h.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            actual: u.len(),
        });
    }
    Ok(ExpandedSpectrum(
        u.values()
            .iter()
            .zip(h.gains())
            .map(|(&x, &g)| x * g)
            .collect(),
    ))
}
