//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass; parameters are
//! bound as borrowed leaves, and [`Graph::backward`] fills gradient buffers
//! for everything reachable from a scalar loss. Only the operations the
//! encoder and the three heads need are provided.

mod graph;
pub mod gradcheck;
mod kernels;
mod tensor;

pub use graph::{Graph, Unary, Var, LOG_CLAMP};
pub use tensor::Tensor;

pub(crate) use graph::softmax_in_place;

#[cfg(test)]
mod tests;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of bounds for length {len}")]
    Index { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Softmax of a plain slice (no graph), max-subtracted.
pub fn softmax<T: crate::Scalar>(logits: &[T]) -> Result<Vec<T>, AutodiffError> {
    if logits.is_empty() {
        return Err(AutodiffError::Shape("softmax of an empty vector".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}
