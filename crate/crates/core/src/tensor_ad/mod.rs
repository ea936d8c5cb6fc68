//! Dense tensors with a reverse-mode gradient tape.
//!
//! Every differentiable quantity in the crate (network weights, designs,
//! simulated outcomes, bound values) is a [`Var`] on a [`Tape`]. A tape is
//! single-threaded; independent tapes can live on independent threads.

mod adam;
mod check;
mod kernels;
mod ops;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use check::finite_diff_grad;
pub use kernels::{logsumexp, sigmoid};
pub use ops::{forward_op, OpKind};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} is undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("NaN in gradient of parameter {0}")]
    NanGradient(usize),
    #[error("{0}")]
    Invalid(String),
}
