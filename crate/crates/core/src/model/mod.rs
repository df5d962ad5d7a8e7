//! The classification network: frequency-domain embedding, attention
//! backbone (self or double-branch cross attention) and the two-class head.

mod config;
mod network;
mod params;
mod train;

pub use config::{embed_dim_for, ModelConfig, Scale, Variant};
pub use network::{
    dbc_block, denoise_head, fd_embed, mask_bit, self_attention_block, BlockTrace, BranchPair,
    ForwardGraph, ParamVars, Prediction, StreakNet,
};
pub use params::{
    layout, ModelParams, FDEL_ECHO_BIAS, FDEL_ECHO_WEIGHT, FDEL_TEMPLATE_BIAS,
    FDEL_TEMPLATE_WEIGHT, HEAD_BIAS, HEAD_WEIGHT,
};
pub use train::{predict_set, train, EpochLog, SampleSet, TrainConfig, TrainOutcome};
