//! Numeric core for peer-regularized arbitrary style transfer.
//!
//! This crate is `no_std` (with `alloc`) and self-contained: it provides a
//! reverse-mode automatic differentiation tensor engine over `f64`, the
//! encoder / decoder / discriminator networks, the two-stage peer
//! recombination module that performs the actual style transfer in latent
//! space, the latent-space loss functions, ADAM, and the per-batch training
//! step. Everything that touches the filesystem (image formats, checkpoints,
//! configuration files, logs) lives in the companion `peerstyle` crate.
//!
//! Design notes that apply crate-wide:
//!
//! * All tensors are dense row-major `f64`. Image batches are laid out
//!   `[batch, channels, height, width]`.
//! * Fallible operations return [`error::Result`]; shape or argument
//!   mismatches are reported with the offending dimensions, never panics.
//! * All float math goes through `libm` so results are identical with and
//!   without the host `std`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adam;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod tpfr;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
