//! Dense-tensor numeric core with reverse-mode automatic differentiation.
//!
//! Everything downstream (encoders, losses, the adversarial baseline) is
//! expressed through the primitives recorded here, so gradient correctness is
//! checked once, centrally, against finite differences.

mod check;
mod tape;
mod tensor;

pub use check::{finite_difference_check, scalar_fn, ScalarFn};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: needs at least one input")]
    EmptyInput { op: &'static str },
    #[error("shape {shape:?} does not match data length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("zero-sized shape {shape:?} is not allowed")]
    EmptyShape { shape: Vec<usize> },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: zero vector has no direction")]
    ZeroVector { op: &'static str },
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// A named, optionally trainable tensor. Names are unique within a model and
/// key the gradient maps and checkpoint records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: false,
        }
    }
}
