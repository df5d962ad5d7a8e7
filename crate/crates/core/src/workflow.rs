//! Dataset-level glue shared by the command line and the test suites:
//! feature extraction, training and evaluation on a [`Dataset`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{
    f1_score, image_traditional_with, F1Report, ImagingProduct, StreakFrame, StreakNetImager, TraditionalOptions,
};
use crate::io::{Dataset, SampleRef, SplitRole};
use crate::model::{predict_set, train, EpochLog, ModelConfig, ModelParams, SampleSet, StreakNet, TrainConfig, TrainOutcome};
use crate::neural::Tensor2;
use crate::signal::{ieo, ExpandedSpectrum, SpectralEngine};

/// Samples read per parallel transform batch.
const CHUNK: usize = 256;

/// Expanded spectra and labels of a split, in manifest order.
pub fn sample_set(ds: &Dataset, engine: &SpectralEngine, role: SplitRole) -> Result<(SampleSet, Vec<SampleRef>)> {
    let refs = ds.samples(role);
    let width = 2 * engine.config().l_cut;
    let mut features = Vec::with_capacity(refs.len() * width);
    let mut labels = Vec::with_capacity(refs.len());
    let mut stream = ds.stream(refs.clone());
    loop {
        let chunk = stream.by_ref().take(CHUNK).collect::<Result<Vec<_>>>()?;
        if chunk.is_empty() {
            break;
        }
        let spectra = chunk
            .par_iter()
            .map(|s| engine.fft_truncate(s.signal.samples()).map(|u| ieo(&u).0))
            .collect::<Result<Vec<_>>>()?;
        for (s, f) in chunk.iter().zip(spectra) {
            features.extend(f);
            labels.push(s.label);
        }
    }
    let set = SampleSet::new(Tensor2::new(labels.len(), width, features)?, labels)?;
    Ok((set, refs))
}

pub fn template_features(ds: &Dataset, engine: &SpectralEngine) -> Result<ExpandedSpectrum> {
    Ok(ieo(&engine.fft_truncate(ds.template()?.samples())?))
}

pub fn load_frames(ds: &Dataset) -> Result<Vec<StreakFrame>> {
    (0..ds.manifest().frames).map(|i| ds.read_frame(i)).collect()
}

fn check_model(ds: &Dataset, model: &ModelConfig) -> Result<SpectralEngine> {
    if model.l_cut != ds.sampling().l_cut {
        return Err(Error::Config(format!(
            "model l_cut {} does not match dataset l_cut {}",
            model.l_cut,
            ds.sampling().l_cut
        )));
    }
    SpectralEngine::new(*ds.sampling())
}

/// Trains on the dataset's train split, validating on its val split.
pub fn train_on(
    ds: &Dataset,
    model: &ModelConfig,
    init: ModelParams,
    tc: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let engine = check_model(ds, model)?;
    let (train_set, _) = sample_set(ds, &engine, SplitRole::Train)?;
    let (val_set, _) = sample_set(ds, &engine, SplitRole::Val)?;
    let tem = template_features(ds, &engine)?;
    train(model, init, &train_set, &val_set, &tem, tc, on_epoch)
}

/// Network mask F1 over a split.
pub fn evaluate_network(ds: &Dataset, model: &ModelConfig, params: &ModelParams, role: SplitRole) -> Result<F1Report> {
    let engine = check_model(ds, model)?;
    let (set, _) = sample_set(ds, &engine, role)?;
    let tem = template_features(ds, &engine)?;
    let preds = predict_set(model, params, &set, &tem, CHUNK)?;
    let bits: Vec<u8> = preds.iter().map(|p| p.mask_bit).collect();
    f1_score(&bits, &set.labels)
}

/// F1 of a frame-major mask restricted to the rows of a split.
pub fn split_f1(ds: &Dataset, mask: &crate::imaging::BinaryMask, role: SplitRole) -> Result<F1Report> {
    if mask.shape() != ds.labels().shape() {
        return Err(Error::ShapeMismatch {
            op: "split_f1",
            lhs: mask.shape(),
            rhs: ds.labels().shape(),
        });
    }
    let refs = ds.samples(role);
    let pred: Vec<u8> = refs.iter().map(|r| mask.get(r.frame, r.row)).collect();
    let truth: Vec<u8> = refs.iter().map(|r| ds.labels().get(r.frame, r.row)).collect();
    f1_score(&pred, &truth)
}

/// Traditional imaging of every frame (the threshold is global over all of
/// them) and its F1 over `role`.
pub fn evaluate_traditional(
    ds: &Dataset,
    opts: &TraditionalOptions,
    role: SplitRole,
) -> Result<(ImagingProduct, f64, F1Report)> {
    let engine = SpectralEngine::new(*ds.sampling())?;
    let frames = load_frames(ds)?;
    let (product, threshold) = image_traditional_with(&engine, &frames, &ds.template()?, opts)?;
    let report = split_f1(ds, product.mask(), role)?;
    Ok((product, threshold, report))
}

/// Network imaging of every frame.
pub fn image_dataset_streaknet(ds: &Dataset, model: &ModelConfig, params: &ModelParams) -> Result<ImagingProduct> {
    check_model(ds, model)?;
    let imager = StreakNetImager::new(StreakNet::new(*model, params.clone())?, *ds.sampling(), &ds.template()?)?;
    let mut products = Vec::with_capacity(ds.manifest().frames);
    imager.image_stream((0..ds.manifest().frames).map(|i| ds.read_frame(i)), |p| {
        products.push(p);
        Ok(())
    })?;
    ImagingProduct::from_frames(products)
}
