//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every loss evaluation: parameters enter as
//! leaves, operations append nodes, and [`Graph::backward`] sweeps the tape in
//! reverse creation order.

mod gradcheck;
mod graph;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Activation, BudgetPlan, Elementwise, Graph, Reduction, Var, SIGMOID_MARGIN};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    SizeMismatch { shape: Vec<usize>, len: usize },
    #[error("rows {start}..{end} out of range for {rows} rows")]
    RowRange {
        start: usize,
        end: usize,
        rows: usize,
    },
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("variable does not belong to this graph")]
    ForeignVariable,
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("invalid finite-difference epsilon {0}")]
    InvalidEpsilon(f64),
}
