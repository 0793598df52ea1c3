//! Reverse-mode differentiation for fully-connected networks, plus Adam.
//!
//! Passes are batched: each row of an input [`Matrix`] is an independent
//! sample, and a [`Tape`] caches the per-layer inputs needed to sweep back.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, RELATIVE_ERROR_FLOOR};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, sigmoid, Activation, Layer, MlpShape, ParamStore, Skip, Tape};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at layer {layer}: expected {expected}, found {found}")]
    Shape {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("network has no layers")]
    Empty,
    #[error("invalid skip connection into layer {layer} with prefix {prefix}")]
    InvalidSkip { layer: usize, prefix: usize },
    #[error("gradient store shape does not match parameters")]
    GradShape,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
