//! Dense tensors, a reverse-mode tape, and the attention / transformer-block
//! primitives shared by every model component.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the record in reverse. Parameters live in a [`ParamStore`] and are
//! bound onto a tape as leaves for each forward pass.

mod attention;
mod gradcheck;
mod layers;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use attention::{AttnMask, BlockLayout};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{
    attention, feed_forward, init_block, init_linear, init_norm, linear, transformer_block, BlockParams,
    LinearParams, NormParams,
};
pub use params::{Bound, GradSet, Group, Param, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("attention mask leaves query row {row} without any allowed key")]
    DegenerateMask { row: usize },
    #[error("non-finite value entering {op}")]
    PropagatedInvalid { op: &'static str },
    #[error("loss function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),
}
