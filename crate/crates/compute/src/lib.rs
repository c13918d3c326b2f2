//! Minimal reverse-mode differentiable tensor layer.
//!
//! Only the op set the sequence models need is provided: matmul, add/mul,
//! relu, embedding lookup, layer norm, softmax/log-softmax, segmented masked
//! attention, cross-entropy, and sum/mean reductions. All arithmetic is `f64`.

mod fd;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use fd::{finite_diff_grad, max_relative_error};
pub use graph::{AttentionLayout, Evaluation, Gradients, Graph, NodeId, Op, Segment, Tape};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::{log_softmax, softmax, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: usize, detail: String },
    #[error("tensor shape {shape:?} does not hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("node {0} does not exist yet")]
    UnknownNode(usize),
    #[error("graph has {expected} leaves, {got} values supplied")]
    LeafCount { expected: usize, got: usize },
    #[error("leaves must be created with Tape::leaf")]
    LeafViaPush,
    #[error("cannot average zero parameter sets")]
    EmptyAverage,
    #[error("parameter layout mismatch: {0}")]
    ParamLayout(String),
}
