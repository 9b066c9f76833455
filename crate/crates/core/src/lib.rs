//! Packed-Ensembles: ensembles of subnetworks packed into a single network through
//! grouped convolutions, with the uncertainty metrics used to evaluate them.

pub mod error;
pub mod metrics;
pub mod nn;
pub mod packed;
pub mod regression;
pub mod sparsity;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
