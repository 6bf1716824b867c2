//! Wavelet-like auto-encoder image decomposition for faster CNN
//! classification, at desk scale.
//!
//! An encoder splits an image into two half-resolution channels (`I_L`
//! carrying content, `I_H` carrying residual detail), a dual-branch decoder
//! reconstructs the image from them, and a two-stream classifier consumes
//! the pair: a standard network over `I_L` and a quarter-width fusion
//! network over `I_H`. All forward and backward passes are hand-written.
//!
//! Per-sample work inside the kernels is spread over a rayon pool when the
//! `parallel` feature is on (the default). Results are collected in sample
//! order, so threaded and sequential runs produce identical bits.

pub mod baselines;
pub mod checks;
pub mod classifier;
pub mod data;
mod error;
pub mod experiments;
pub mod flops;
pub mod layers;
pub mod ops;
pub mod par;
pub mod pipeline;
pub mod tensor;
pub mod training;
pub mod wae;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use layers::Params;
pub use pipeline::{Pipeline, PipelineKind};
pub use tensor::{Real, Tensor};
