//! Minimal numerics for training small convolutional codecs on the CPU.
//!
//! Values live in [`Tensor`]s. Differentiable computations are recorded on a
//! [`Tape`] and differentiated in reverse with [`Tape::backward`]. The
//! optimizer is a plain bias-corrected Adam ([`Adam`]) and [`dct`] provides the
//! orthonormal type-II/III transform pair used by the evaluation code.

mod error;
mod kernels;
mod tape;
mod tensor;

pub mod dct;
pub mod gradcheck;
pub mod init;
pub mod optim;

pub use error::{NumError, Result};
pub use kernels::{conv2d_out_extent, conv_transpose2d_out_extent};
pub use optim::{Adam, OptimState};
pub use dct::Dct2;
pub use tape::{ResampleMode, Tape, Var};
pub use tensor::Tensor;
