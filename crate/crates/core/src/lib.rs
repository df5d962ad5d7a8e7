//! Streak-tube carrier LiDAR-radar signal processing.
//!
//! Classical band-pass and matched-filter imaging, the attention-based
//! binary-classification imaging network (self-attention and double-branch
//! cross-attention backbones), weight-derived equivalent filters, synthetic
//! data generation and the average-imaging-time benchmark.

pub mod aam;
pub mod error;
pub mod imaging;
pub mod io;
pub mod model;
pub mod neural;
pub mod signal;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
