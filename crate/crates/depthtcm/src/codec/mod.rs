//! Toy learned codec: analysis/synthesis transforms built from
//! convolution + windowed-attention mixture blocks, a hyperprior entropy
//! model, and a hand-written training loop.
//!
//! The transform maps the 3-channel fringe image to a latent `y` at 1/16
//! resolution; a hyper-transform summarizes `y` into `z`, whose decoded
//! form parameterizes a per-element Gaussian entropy model for `y`. Both
//! latents are rounded to integers and range-coded for real bitstreams;
//! training replaces rounding with differentiable proxies.
//!
//! All differentiation is hand-written per layer (see [`nn`]); there is no
//! autodiff framework underneath. Finite-difference tests pin every
//! backward pass to its forward pass.

pub mod attention;
pub mod checkpoint;
pub mod decode_train;
pub mod gradcheck;
pub mod latent;
pub mod likelihood;
pub mod losses;
pub mod model;
pub mod nn;
pub mod tcm;
pub mod train;

pub use checkpoint::{load_model, save_model};
pub use losses::{LossParts, LossWeights};
pub use model::{CodecConfig, CodecModel};
pub use train::{train_step, Sample, TrainStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("channel count {channels} must be even to split between branches")]
    OddChannels { channels: usize },
    #[error("no valid pixels in loss mask")]
    EmptyMask,
    #[error("non-finite gradient; optimizer step skipped")]
    NonFiniteGradient,
    #[error("loss became non-finite: {0}")]
    NonFiniteLoss(f64),
    #[error(transparent)]
    Entropy(#[from] crate::entropy::EntropyError),
    #[error(transparent)]
    Mwd(#[from] crate::mwd::MwdError),
    #[error(transparent)]
    Quant(#[from] crate::quant::QuantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Downsampling factor of the analysis transform (and the padding multiple
/// inputs are raised to).
pub const TOTAL_STRIDE: usize = 16;

/// Additional downsampling of the hyper-analysis transform on top of `y`.
pub const HYPER_STRIDE: usize = 4;
