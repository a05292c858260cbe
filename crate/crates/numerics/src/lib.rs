//! Minimal dense-tensor math with tape-based reverse-mode differentiation.
//!
//! The crate is deliberately small: it carries exactly the operators a
//! post-norm transformer encoder needs (dense layers, multi-head attention,
//! layer normalization, a fused bit-wise cross-entropy) plus an AdamW
//! optimizer. Everything is generic over [`Real`] so the same graph can be
//! evaluated in 32-bit for training and in 64-bit for gradient checks.

mod error;
mod graph;
mod kernels;
mod optim;
mod tensor;

pub mod gradcheck;

pub use error::{NumericsError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};
