use rayon::prelude::*;

use super::traditional::filtered_candidate;
use super::{FrameProduct, ImagingProduct, StreakFrame};
use crate::aam::{analyze, to_transfer_function};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Prediction, StreakNet, FDEL_ECHO_WEIGHT};
use crate::neural::Tensor2;
use crate::signal::{ieo, CandidatePixel, ComplexSpectrum, ExpandedSpectrum, SamplingConfig, SpectralEngine, TimeSignal, TransferFunction};

/// Rows per network batch.
pub const DEFAULT_ROW_BATCH: usize = 64;

/// Per-row network imaging. The mask comes from the classifier; gray and
/// distance come from matched filtering after the equivalent filter derived
/// from the echo embedding weights. Every frame is finished on its own.
#[derive(Debug)]
pub struct StreakNetImager {
    net: StreakNet,
    engine: SpectralEngine,
    u_tem: ComplexSpectrum,
    x_tem: ExpandedSpectrum,
    filter: TransferFunction,
    conjugate_template: bool,
    batch: usize,
}

impl StreakNetImager {
    pub fn new(net: StreakNet, cfg: SamplingConfig, template: &TimeSignal) -> Result<Self> {
        if net.config().l_cut != cfg.l_cut {
            return Err(Error::Config(format!(
                "model expects l_cut {}, sampling config has {}",
                net.config().l_cut,
                cfg.l_cut
            )));
        }
        let engine = SpectralEngine::new(cfg)?;
        let u_tem = engine.fft_truncate(template.samples())?;
        let w = net.params().get(FDEL_ECHO_WEIGHT)?;
        let filter = to_transfer_function(&analyze(w, cfg.freq_resolution())?)?;
        Ok(Self {
            net,
            engine,
            x_tem: ieo(&u_tem),
            u_tem,
            filter,
            conjugate_template: false,
            batch: DEFAULT_ROW_BATCH,
        })
    }

    pub fn with_conjugate_template(mut self, on: bool) -> Self {
        self.conjugate_template = on;
        self
    }

    pub fn with_row_batch(mut self, rows: usize) -> Self {
        self.batch = rows.max(1);
        self
    }

    pub fn filter(&self) -> &TransferFunction {
        &self.filter
    }

    pub fn engine(&self) -> &SpectralEngine {
        &self.engine
    }

    /// Classifier outputs and candidates for a block of rows.
    fn rows(&self, frame: &StreakFrame, rows: std::ops::Range<usize>) -> Result<(Vec<Prediction>, Vec<CandidatePixel>)> {
        let width = 2 * self.engine.config().l_cut;
        let mut features = Vec::with_capacity(rows.len() * width);
        let mut candidates = Vec::with_capacity(rows.len());
        for r in rows.clone() {
            let u = self.engine.fft_truncate(frame.signal(r).samples())?;
            candidates.push(filtered_candidate(
                &self.engine,
                &u,
                &self.u_tem,
                Some(&self.filter),
                self.conjugate_template,
            )?);
            features.extend(ieo(&u).0);
        }
        let x = Tensor2::new(rows.len(), width, features)?;
        Ok((self.net.predict_spectra(x, &self.x_tem)?, candidates))
    }

    pub fn image_frame(&self, frame: &StreakFrame) -> Result<FrameProduct> {
        if frame.cols() != self.engine.config().n_samples {
            return Err(Error::Config(format!(
                "frame {} has {} columns, sampling config expects {}",
                frame.angle_index,
                frame.cols(),
                self.engine.config().n_samples
            )));
        }
        let blocks: Vec<_> = (0..frame.rows())
            .step_by(self.batch)
            .map(|s| s..(s + self.batch).min(frame.rows()))
            .collect();
        let parts = blocks
            .into_par_iter()
            .map(|b| self.rows(frame, b))
            .collect::<Result<Vec<_>>>()?;
        let mut mask = Vec::with_capacity(frame.rows());
        let mut cands = Vec::with_capacity(frame.rows());
        for (p, c) in parts {
            mask.extend(p.iter().map(|p| p.mask_bit));
            cands.extend(c);
        }
        FrameProduct::new(frame.angle_index, &cands, mask)
    }

    /// Images frames in order, handing each result to `emit` as soon as it
    /// is done.
    pub fn image_stream<I, F>(&self, frames: I, mut emit: F) -> Result<()>
    where
        I: IntoIterator<Item = Result<StreakFrame>>,
        F: FnMut(FrameProduct) -> Result<()>,
    {
        for frame in frames {
            emit(self.image_frame(&frame?)?)?;
        }
        Ok(())
    }
}

pub fn image_streaknet(
    frames: &[StreakFrame],
    template: &TimeSignal,
    params: &ModelParams,
    model: &ModelConfig,
    cfg: &SamplingConfig,
) -> Result<ImagingProduct> {
    let imager = StreakNetImager::new(StreakNet::new(*model, params.clone())?, *cfg, template)?;
    let products = frames.iter().map(|f| imager.image_frame(f)).collect::<Result<Vec<_>>>()?;
    ImagingProduct::from_frames(products)
}
