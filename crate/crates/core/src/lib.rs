//! Shampoo: structure-aware preconditioning for tensor-shaped parameters.
//!
//! The numerical core is generic over `f32`/`f64`; the aliases below pin the
//! common `f64` case.

// Dense kernels read more plainly with index loops.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod harness;
pub mod optimizer;
pub mod problems;
pub mod psd;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor = tensor::DenseTensor<f64>;
pub type Matrix = tensor::DenseMatrix<f64>;
pub type Sym = psd::SymMatrix<f64>;
pub type Shampoo = optimizer::ShampooState<f64>;
pub type Baseline = baselines::BaselineState<f64>;
