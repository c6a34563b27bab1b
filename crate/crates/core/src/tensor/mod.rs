//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array. Operations on tensors are
//! recorded onto a thread-local [`tape::ComputationTape`] whenever any input
//! requires gradients; [`tape::backward`] replays the tape in reverse and
//! returns a [`tape::Gradients`] map keyed by parameter identity.
//!
//! Tensors are cheap to clone (the data is shared) and a clone keeps the
//! identity of the original, so a snapshot of a parameter still matches its
//! gradients. A tape and the tensors recorded on it belong to one thread;
//! tensors themselves can be moved to other threads freely.

mod apply;
mod gradcheck;
mod ops;
pub mod tape;

pub use apply::{apply, OpKind};
pub use gradcheck::{grad_check, relative_error};
pub use tape::{backward, clear_tape, no_grad, ComputationTape, Gradients};

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

fn next_tensor_id() -> u64 {
    NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense multi-dimensional array of f64 values in row-major order.
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    id: u64,
    /// Cached (tape epoch, node index) of this tensor on the current tape.
    node: Cell<Option<(u64, usize)>>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            id: self.id,
            node: Cell::new(self.node.get()),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("data", &&self.data[..self.data.len().min(8)])
            .finish()
    }
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    ///
    /// Panics if the shape product does not match the data length.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            id: next_tensor_id(),
            node: Cell::new(None),
        }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; shape.iter().product()])
    }

    /// All-one tensor of the given shape.
    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![1.0; shape.iter().product()])
    }

    /// Constant-filled tensor.
    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_vec(shape, vec![value; shape.iter().product()])
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![value])
    }

    /// Identity matrix of size n.
    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::from_vec(&[n, n], data)
    }

    /// A trainable parameter: gradients will be collected for it by
    /// [`tape::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        let mut t = Tensor::from_vec(shape, data);
        t.requires_grad = true;
        t
    }

    /// Copy of this tensor marked as a fresh trainable parameter (new identity).
    pub fn to_param(&self) -> Tensor {
        let mut t = Tensor::from_vec(&self.shape, self.data.as_ref().clone());
        t.requires_grad = true;
        t
    }

    /// Copy of this tensor detached from the tape and from gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(&self.shape, self.data.as_ref().clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Stable identity of this tensor; clones share it.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Value of a scalar tensor.
    ///
    /// Panics if the tensor has more than one element.
    pub fn value(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "value() on non-scalar shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at a row-major flat index.
    pub fn at(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    /// Element of a 2-D tensor.
    pub fn at2(&self, row: usize, col: usize) -> f64 {
        assert_eq!(self.ndim(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Overwrite the values of this tensor in place, keeping shape and
    /// identity. Used by the optimizer between tape passes; any snapshot
    /// clone keeps the old values.
    pub fn set_data(&mut self, data: Vec<f64>) {
        assert_eq!(data.len(), self.data.len(), "set_data length mismatch");
        *Arc::make_mut(&mut self.data) = data;
        self.node.set(None);
    }

    /// Copy with one coordinate replaced; plain (untracked) tensor.
    pub fn with_value_at(&self, idx: usize, value: f64) -> Tensor {
        let mut data = self.data.as_ref().clone();
        data[idx] = value;
        Tensor::from_vec(&self.shape, data)
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn node_cell(&self) -> &Cell<Option<(u64, usize)>> {
        &self.node
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad,
            id: next_tensor_id(),
            node: Cell::new(None),
        }
    }
}
