//! Blind stereoscopic image quality prediction.
//!
//! A shared-weight convolutional auto-encoder reconstructs each view; its
//! reconstruction error and high-level features become per-view likelihood
//! and prior maps that are normalized across the two views. The maps and the
//! images are fused into a three-channel input for a residual regression
//! network that outputs a quality score. Everything runs on the small
//! reverse-mode tensor engine in [`tensor`].

pub mod autoencoder;
pub mod error;
pub mod image;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod regressor;
pub mod rivalry;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, ParamStore, Tape, Tensor, Var};
