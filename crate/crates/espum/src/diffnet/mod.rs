//! Minimal reverse-mode differentiation substrate.
//!
//! Everything the pipeline trains is built from four layer kinds (1-D "same"
//! convolution, ReLU, sigmoid, row softmax) over dense f64 tensors, optimized
//! with Adam. No general graph: a forward pass records activations on a
//! [`Tape`], and `backward` walks them in reverse. Double precision
//! throughout so gradient checks and distribution normalization have
//! headroom.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use network::{LayerSpec, Network, NetworkSpec, Parameter, Tape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DiffnetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
