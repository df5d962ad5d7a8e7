use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FrameProduct, ImagingProduct, StreakFrame};
use crate::error::{Error, Result};
use crate::signal::{
    apply_filter, candidate_pixel, ideal_bandpass, ieo, iieo, otsu_threshold, CandidatePixel, ComplexSpectrum,
    SamplingConfig, SpectralEngine, TimeSignal, TransferFunction,
};

/// How the global denoising threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    #[default]
    Otsu,
    Manual(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraditionalOptions {
    /// `None` keeps every retained bin.
    pub band: Option<(f64, f64)>,
    pub threshold: Threshold,
    pub conjugate_template: bool,
}

/// Candidate pixel of one row spectrum after filtering with `h`.
pub fn filtered_candidate(
    engine: &SpectralEngine,
    u: &ComplexSpectrum,
    u_tem: &ComplexSpectrum,
    h: Option<&TransferFunction>,
    conjugate_template: bool,
) -> Result<CandidatePixel> {
    let filtered = match h {
        Some(h) => iieo(&apply_filter(&ieo(u), h)?, u.freq_resolution)?,
        None => u.clone(),
    };
    let v = engine.matched_filter(&filtered, u_tem, conjugate_template)?;
    candidate_pixel(v.samples(), engine.config())
}

fn check_frame(frame: &StreakFrame, cfg: &SamplingConfig) -> Result<()> {
    if frame.cols() != cfg.n_samples {
        return Err(Error::Config(format!(
            "frame {} has {} columns, sampling config expects {}",
            frame.angle_index,
            frame.cols(),
            cfg.n_samples
        )));
    }
    Ok(())
}

/// Spectra of every row of a frame, computed in parallel, in row order.
pub fn row_spectra(engine: &SpectralEngine, frame: &StreakFrame) -> Result<Vec<ComplexSpectrum>> {
    check_frame(frame, engine.config())?;
    (0..frame.rows())
        .into_par_iter()
        .map(|r| engine.fft_truncate(frame.signal(r).samples()))
        .collect()
}

/// Per-row candidates of one frame before thresholding.
pub fn frame_candidates(
    engine: &SpectralEngine,
    frame: &StreakFrame,
    u_tem: &ComplexSpectrum,
    h: Option<&TransferFunction>,
    conjugate_template: bool,
) -> Result<Vec<CandidatePixel>> {
    check_frame(frame, engine.config())?;
    (0..frame.rows())
        .into_par_iter()
        .map(|r| {
            let u = engine.fft_truncate(frame.signal(r).samples())?;
            filtered_candidate(engine, &u, u_tem, h, conjugate_template)
        })
        .collect()
}

/// Thresholds the candidates of all frames at once and assembles the maps.
/// Returns the product and the threshold used.
pub fn threshold_candidates(
    frames: Vec<(u32, Vec<CandidatePixel>)>,
    threshold: Threshold,
) -> Result<(ImagingProduct, f64)> {
    let t = match threshold {
        Threshold::Manual(t) => t,
        Threshold::Otsu => {
            let all: Vec<f64> = frames.iter().flat_map(|(_, c)| c.iter().map(|p| p.gray)).collect();
            otsu_threshold(&all)?
        }
    };
    let products = frames
        .into_iter()
        .map(|(angle, c)| {
            let mask = c.iter().map(|p| u8::from(p.gray >= t)).collect();
            FrameProduct::new(angle, &c, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ImagingProduct::from_frames(products)?, t))
}

/// Band-pass + matched filter + global Otsu threshold.
pub fn image_traditional(
    frames: &[StreakFrame],
    template: &TimeSignal,
    band: (f64, f64),
    cfg: &SamplingConfig,
) -> Result<ImagingProduct> {
    let engine = SpectralEngine::new(*cfg)?;
    let opts = TraditionalOptions {
        band: Some(band),
        ..Default::default()
    };
    Ok(image_traditional_with(&engine, frames, template, &opts)?.0)
}

pub fn image_traditional_with(
    engine: &SpectralEngine,
    frames: &[StreakFrame],
    template: &TimeSignal,
    opts: &TraditionalOptions,
) -> Result<(ImagingProduct, f64)> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to image".into()));
    }
    let h = opts
        .band
        .map(|(lo, hi)| ideal_bandpass(engine.config(), lo, hi))
        .transpose()?;
    let u_tem = engine.fft_truncate(template.samples())?;
    let candidates = frames
        .iter()
        .map(|f| Ok((f.angle_index, frame_candidates(engine, f, &u_tem, h.as_ref(), opts.conjugate_template)?)))
        .collect::<Result<Vec<_>>>()?;
    threshold_candidates(candidates, opts.threshold)
}

/// F1 of the band-pass pipeline for consecutive bands `[k·step, (k+1)·step]`
/// up to `f_max`. Row spectra are computed once per frame and shared by all
/// bands. `truth` is frame-major like [`ImagingProduct::mask`].
pub fn enumerate_bandpass(
    engine: &SpectralEngine,
    frames: &[StreakFrame],
    template: &TimeSignal,
    f_max: f64,
    step: f64,
    truth: &super::BinaryMask,
) -> Result<Vec<((f64, f64), super::F1Report)>> {
    if !(step > 0.0 && f_max > 0.0) {
        return Err(Error::InvalidArgument("step and f_max must be positive".into()));
    }
    let n = (f_max / step).round();
    if (n * step - f_max).abs() > 1e-9 * f_max || n < 1.0 {
        return Err(Error::InvalidArgument(format!("step {step} Hz does not divide {f_max} Hz")));
    }
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to image".into()));
    }
    let bands: Vec<(f64, f64)> = (0..n as usize).map(|k| (k as f64 * step, (k + 1) as f64 * step)).collect();
    let filters = bands
        .iter()
        .map(|&(lo, hi)| ideal_bandpass(engine.config(), lo, hi))
        .collect::<Result<Vec<_>>>()?;
    let u_tem = engine.fft_truncate(template.samples())?;

    // per band, per frame candidates
    let mut per_band: Vec<Vec<(u32, Vec<CandidatePixel>)>> = vec![Vec::with_capacity(frames.len()); bands.len()];
    for frame in frames {
        let spectra = row_spectra(engine, frame)?;
        let results: Vec<Vec<CandidatePixel>> = filters
            .par_iter()
            .map(|h| {
                spectra
                    .iter()
                    .map(|u| filtered_candidate(engine, u, &u_tem, Some(h), false))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (slot, c) in per_band.iter_mut().zip(results) {
            slot.push((frame.angle_index, c));
        }
    }
    bands
        .into_iter()
        .zip(per_band)
        .map(|(band, cands)| {
            let (product, _) = threshold_candidates(cands, Threshold::Otsu)?;
            Ok((band, super::f1_score(product.mask().bits(), truth.bits())?))
        })
        .collect()
}
