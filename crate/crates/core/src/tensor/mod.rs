//! Dense n-dimensional tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap, thread-safe handle. Operations are methods on a
//! [`Tape`]; a recording tape remembers how each output was produced so that
//! [`Tape::backward`] can push gradients back into leaf tensors created with
//! [`Tensor::parameter`]. A tape built with [`Tape::no_grad`] records nothing
//! and is what inference paths use.

mod gemm;
pub mod gradcheck;
pub mod io;
mod ops;
mod precision;
mod tape;

pub use ops::{conv_out_extent, deconv_out_extent, Activation, BatchNormStats, Mode, SCORE_EPS};
pub use precision::{current_precision, set_thread_precision, with_precision, Precision};
pub use tape::Tape;

pub(crate) use gemm::{gemm, MatRef};
pub(crate) use ops::{conv2d_raw, deconv2d_raw, Geom2};

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid configuration: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("shape {shape:?} does not hold {len} elements")]
    Shape { shape: Vec<usize>, len: usize },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    requires_grad: bool,
    data: RwLock<Vec<f64>>,
    grad: RwLock<Option<Vec<f64>>>,
}

/// Shared handle to a row-major real array.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    fn build(shape: Vec<usize>, mut data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(TensorError::Shape { shape, len: data.len() });
        }
        precision::round_slice(&mut data);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            requires_grad,
            data: RwLock::new(data),
            grad: RwLock::new(None),
        })))
    }

    /// Constant tensor; never receives gradients.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::build(shape.to_vec(), data, false)
    }

    /// Trainable leaf; [`Tape::backward`] accumulates into its gradient.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::build(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("full: invalid shape or value")
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(&[1], vec![value])
    }

    /// Output of an operation: already rounded and checked by the caller.
    pub(crate) fn from_op(op: &'static str, shape: Vec<usize>, mut data: Vec<f64>) -> Result<Self> {
        precision::round_slice(&mut data);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Ok(Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            requires_grad: false,
            data: RwLock::new(data),
            grad: RwLock::new(None),
        })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read()
    }

    pub(crate) fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        self.0.data.write()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.read().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.read();
        assert_eq!(d.len(), 1, "item() on a tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrite the values in place (checkpoint restore, running statistics).
    pub fn assign(&self, mut values: Vec<f64>) -> Result<()> {
        if values.len() != self.numel() {
            return Err(TensorError::Shape { shape: self.0.shape.clone(), len: values.len() });
        }
        precision::round_slice(&mut values);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "assign" });
        }
        *self.0.data.write() = values;
        Ok(())
    }

    /// Overwrite the values without rounding to the current precision.
    pub(crate) fn assign_exact(&self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.numel() {
            return Err(TensorError::Shape { shape: self.0.shape.clone(), len: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "assign" });
        }
        *self.0.data.write() = values;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.read().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.read().is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.write() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.write();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
                precision::round_slice(acc);
            }
            None => {
                let mut v = g.to_vec();
                precision::round_slice(&mut v);
                *slot = Some(v);
            }
        }
    }

    /// Copy of the values with no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec()).expect("detach of a valid tensor")
    }

    /// Copy with a different shape of the same element count. Not differentiable;
    /// use [`Tape::reshape`] inside a graph.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.to_vec())
    }

    /// Bitwise equality of shape and values.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.data();
        let preview: Vec<f64> = d.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("head", &preview)
            .finish()
    }
}

pub(crate) fn check_shape(op: &'static str, t: &Tensor, ndim: usize) -> Result<()> {
    if t.ndim() != ndim {
        return Err(TensorError::Config {
            op,
            msg: format!("expected a {ndim}-d tensor, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}
