use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{ForwardGraph, Prediction, StreakNet};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::imaging::f1_score;
use crate::neural::{ema_update, ramped_decay, sgd_step, OptimState, Tensor2};
use crate::signal::ExpandedSpectrum;

/// Expanded echo spectra (one per row) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub features: Tensor2,
    pub labels: Vec<u8>,
}

impl SampleSet {
    pub fn new(features: Tensor2, labels: Vec<u8>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor2, Vec<usize>) {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        let x = Tensor2::new(idx.len(), cols, data).expect("gathered rows");
        (x, idx.iter().map(|&i| usize::from(self.labels[i])).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate per batch item; scaled by batch size and annealed.
    pub base_lr: f64,
    pub ema_decay: f64,
    /// Updates over which the EMA decay ramps up from 0.
    pub ema_ramp: f64,
    pub seed: u64,
    /// Rows per inference batch during validation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 16,
            base_lr: 2e-6,
            ema_decay: 0.9998,
            ema_ramp: 2000.0,
            seed: 0,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::Config("base_lr must be finite and >= 0".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config("ema_decay must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// EMA weights from the epoch with the highest validation F1 (the
    /// initialization when no epoch ran).
    pub best: ModelParams,
    pub best_epoch: Option<usize>,
    pub best_f1: f64,
    /// EMA weights after the final epoch.
    pub last: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Batched predictions for a whole set; rows are independent so the
/// parallel split does not change any value.
pub fn predict_set(
    cfg: &ModelConfig,
    params: &ModelParams,
    set: &SampleSet,
    template: &ExpandedSpectrum,
    batch: usize,
) -> Result<Vec<Prediction>> {
    let net = StreakNet::new(*cfg, params.clone())?;
    let cols = set.features.cols();
    let chunks: Vec<Result<Vec<Prediction>>> = set
        .features
        .data()
        .par_chunks(batch.max(1) * cols)
        .map(|chunk| {
            let x = Tensor2::new(chunk.len() / cols, cols, chunk.to_vec())?;
            net.predict_spectra(x, template)
        })
        .collect();
    let mut out = Vec::with_capacity(set.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Mini-batch SGD with cosine annealing and EMA shadow weights. Validation
/// F1 of the EMA weights is computed after every epoch; the best one is
/// retained. `on_epoch` sees each log entry as it is produced.
pub fn train(
    cfg: &ModelConfig,
    init: ModelParams,
    train_set: &SampleSet,
    val_set: &SampleSet,
    template: &ExpandedSpectrum,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    init.check_layout(cfg)?;
    if template.len() != cfg.input_dim() {
        return Err(Error::LengthMismatch {
            expected: cfg.input_dim(),
            actual: template.len(),
        });
    }
    let tem = Tensor2::row_vector(template.values().to_vec());
    let mut params = init.clone();
    let mut shadow = init.clone();
    let mut best = init;
    let mut best_epoch = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(tc.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut updates = 0u64;

    for epoch in 0..tc.epochs {
        let lr = OptimState {
            base_lr: tc.base_lr,
            batch_size: tc.batch_size,
            epoch,
            total_epochs: tc.epochs,
            ema_decay: tc.ema_decay,
        }
        .learning_rate();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(tc.batch_size) {
            let (x, y) = train_set.gather(idx);
            let fwd = ForwardGraph::build(cfg, &params, x, tem.clone(), true)?;
            let (loss, grads) = fwd.loss_and_grads(&y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}")));
            }
            loss_sum += loss * idx.len() as f64;
            sgd_step(params.tensors_mut(), &grads, lr)?;
            updates += 1;
            let decay = ramped_decay(tc.ema_decay, updates, tc.ema_ramp);
            ema_update(shadow.tensors_mut(), params.tensors(), decay)?;
        }
        if params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged(format!("non-finite weights at epoch {epoch}")));
        }
        let mean_loss = loss_sum / train_set.len().max(1) as f64;

        let preds = predict_set(cfg, &shadow, val_set, template, tc.eval_batch)?;
        let bits: Vec<u8> = preds.iter().map(|p| p.mask_bit).collect();
        let report = f1_score(&bits, &val_set.labels)?;
        let entry = EpochLog {
            epoch,
            mean_loss,
            lr,
            val_precision: report.precision,
            val_recall: report.recall,
            val_f1: report.f1,
        };
        on_epoch(&entry);
        log.push(entry);
        if report.f1 > best_f1 {
            best_f1 = report.f1;
            best_epoch = Some(epoch);
            best = shadow.clone();
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_f1: best_f1.max(0.0),
        last: shadow,
        log,
    })
}
