//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants carry
//! the operation name and enough context to diagnose the failure without a
//! debugger; messages include the offending dimensions or values.

use alloc::string::String;

/// Errors produced by tensor operations, network construction and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: shape mismatch: {msg}")]
    ShapeMismatch { op: &'static str, msg: String },

    /// An argument is out of range or otherwise invalid for the operation.
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// An operation produced a NaN or infinity while finite checks are on.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward: loss must be a scalar, got {numel} elements")]
    NonScalarLoss { numel: usize },

    /// An optimizer step found a trainable parameter without a gradient.
    #[error("optimizer step: parameter '{name}' has no gradient")]
    MissingGrad { name: String },

    /// A configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A loss component became NaN or infinite during training.
    #[error("training aborted: loss component '{component}' is non-finite at step {step}")]
    NonFiniteLoss { component: String, step: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for shape errors.
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, msg: msg.into() }
    }

    /// Convenience constructor for argument errors.
    pub(crate) fn arg(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
