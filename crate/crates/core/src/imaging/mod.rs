//! Imaging modes, F1 evaluation and the imaging-time benchmark.

mod ait;
mod f1;
mod frame;
mod product;
mod streaknet;
mod traditional;

pub use ait::{ait_benchmark, fit_line, simulated_ait, simulated_work, AitMode, AitReport};
pub use f1::{f1_score, f1_score_with, F1Report, RecallMode};
pub use frame::{BinaryMask, StreakFrame};
pub use product::{write_pgm, FrameProduct, ImagingProduct};
pub use streaknet::{image_streaknet, StreakNetImager, DEFAULT_ROW_BATCH};
pub use traditional::{
    enumerate_bandpass, filtered_candidate, frame_candidates, image_traditional, image_traditional_with,
    row_spectra, threshold_candidates, Threshold, TraditionalOptions,
};
