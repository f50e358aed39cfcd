//! Reverse-mode automatic differentiation on dense 2-D `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse to accumulate adjoints. Everything downstream
//! (networks, costs, the training loop) builds its graphs through this
//! module, so correctness here is guarded by finite-difference checks in
//! [`gradcheck`].

mod adam;
mod gradcheck_impl;
mod init;
mod norm;
mod tape;
mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use init::{bias_init, xavier_init};
pub use norm::BatchNorm;
pub use tape::{Axis, Gradients, NodeId, Tape};
pub use tensor::Tensor;

pub mod gradcheck {
    //! Finite-difference verification of every differentiable primitive.
    pub use super::gradcheck_impl::{check_tape_gradients, finite_diff, run_full_suite, CaseReport, SuiteReport};
}

use thiserror::Error;

/// Errors raised by graph construction, backward passes and optimizer steps.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum AdError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: empty reduction")]
    EmptyReduce { op: &'static str },
    #[error("batch norm requires at least 2 rows in training mode, got {rows}")]
    BatchTooSmall { rows: usize },
    #[error("non-finite gradient for parameter {index} ({name})")]
    NonFiniteGrad { index: usize, name: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("quantizer input {value} at entry {index} outside [-1, 1]")]
    OutOfRange { value: f64, index: usize },
}

pub type AdResult<T> = Result<T, AdError>;
