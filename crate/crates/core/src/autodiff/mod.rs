//! Dense tensors and a reverse-mode differentiation tape.
//!
//! A [`Graph`] records every operation applied to its nodes. Leaves are
//! created with [`Graph::param`] (differentiable) or [`Graph::constant`];
//! [`Graph::backward`] then fills in gradients for every differentiable node
//! that the scalar loss depends on.
//!
//! ```
//! use chunkmix::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod graph;
pub mod gradcheck;
mod kernels;
mod tensor;


pub use graph::{
    BatchNormMode, ElementwiseKind, Graph, Operand, Precision, RunningStats, Var, BN_EPS, BN_MOMENTUM,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
