//! Three-stage training and patch-based inference.

mod patches;
mod predict;
mod schedule;
mod train;

pub use patches::{augment, axis_offsets, extract_patches, AugmentConfig, PatchGrid, Transform};
pub use predict::{patch_scores, predict_many, predict_quality, rivalry_maps, score_patch};
pub use schedule::LearningRates;
pub use train::{
    pretrain_autoencoder, pretrain_regressor_2d, split_indices, train_joint, Profile, Stage, TraceRecord, TrainConfig,
    TrainReport,
};
