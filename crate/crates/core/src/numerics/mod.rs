//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are flat row-major buffers with shape metadata, generic over the
//! scalar type. All differentiable computation goes through a [`Tape`]: each
//! operation stores its output in a slot and, when gradients are required,
//! records a node that knows how to push adjoints back to its inputs.
//!
//! Deliberate restrictions: no views or strides, no broadcasting beyond a
//! bias add over the last axis. Every other shape mismatch is an error.

mod gradcheck;
mod tape;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, grad_check_sampled, CheckError, Program};
pub use tape::{Tape, TensorId};

use crate::scalar::Scalar;
use std::fmt;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Incompatible operand shapes; carries both, plus the operation name.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Axis argument outside the tensor's rank.
    AxisOutOfRange { axis: usize, rank: usize },
    /// Row/class index outside its table; names the offending index.
    IndexOutOfRange { index: usize, bound: usize },
    /// Data length does not match the product of the extents.
    LengthMismatch { expected: usize, got: usize },
    /// Operation requires a scalar (single-element) tensor.
    NotScalar { shape: Vec<usize> },
    /// Cross-entropy saw only ignored targets.
    NoValidTarget,
    /// A softmax lane with every entry masked out.
    FullyMaskedRow { row: usize },
    /// Non-finite value where a finite one is required.
    NonFinite { what: String },
    /// Invalid slice or concat bounds.
    BadRange { start: usize, end: usize, bound: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch, lhs={lhs:?} rhs={rhs:?}")
            }
            Self::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            Self::IndexOutOfRange { index, bound } => {
                write!(f, "index {index} out of range (bound {bound})")
            }
            Self::LengthMismatch { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            Self::NotScalar { shape } => {
                write!(f, "expected scalar tensor, got shape {shape:?}")
            }
            Self::NoValidTarget => {
                write!(f, "cross-entropy: every position carries the ignore id")
            }
            Self::FullyMaskedRow { row } => {
                write!(f, "attention row {row} has no visible context column")
            }
            Self::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Self::BadRange { start, end, bound } => {
                write!(f, "range {start}..{end} invalid for extent {bound}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// N-dimensional array: flat row-major data plus shape, with an optional
/// gradient buffer of the same length.
#[derive(Clone, Debug)]
pub struct Tensor<E: Scalar> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(data: Vec<E>, shape: &[usize]) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<E>) -> Result<(), TensorError> {
        if grad.len() != self.data.len() {
            return Err(TensorError::LengthMismatch {
                expected: self.data.len(),
                got: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Extent of a 2-D tensor's rows; panics on other ranks (internal use).
    pub(crate) fn dims2(&self) -> (usize, usize) {
        debug_assert_eq!(self.shape.len(), 2);
        (self.shape[0], self.shape[1])
    }
}
