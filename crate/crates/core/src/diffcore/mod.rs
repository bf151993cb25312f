//! Reverse-mode automatic differentiation over dense `(channels, time)` tensors.
//!
//! A [`Graph`] is built eagerly: every operation computes its value
//! immediately and records its parents. [`Graph::backward`] then sweeps the
//! nodes once in reverse creation order, which is a valid topological order
//! because a node can only reference nodes created before it.
//!
//! The operation set is deliberately small. It covers what the flow and
//! autoregressive priors need (dilated convolutions, gated activations,
//! channel shuffles, softmax cross-entropy) and nothing more.

mod check;
mod gemm;
mod graph;
mod tensor;

pub use check::finite_diff_check;
pub use graph::{log_softmax_columns, ConvMode, Gradients, Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value supplied to graph input")]
    NonFiniteInput,

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar((usize, usize)),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> DiffError {
    DiffError::Shape { op, detail: detail.into() }
}
