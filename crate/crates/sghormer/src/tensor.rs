//! Dense real tensors with gradient storage.
//!
//! A [`Tensor`] is a cheap clonable handle (`Rc`) onto a row-major `f64`
//! buffer plus an explicit shape. The tape, parameter registries and the
//! optimizer all hold handles onto the same storage, so gradients written
//! during backward are visible wherever the tensor is referenced.
//!
//! Gradients accumulate in place across backward passes until explicitly
//! zeroed (`zero_grad`), matching the usual define-by-run contract.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

impl AutodiffError {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        AutodiffError::Invalid { op, msg: msg.into() }
    }
}

struct TensorData {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Row-major dense tensor handle. Cloning a `Tensor` clones the handle, not
/// the storage. Single-threaded by design (see the crate-level concurrency
/// notes): one training context owns its tensors and tape.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorData>>,
}

impl Tensor {
    // ── Constructors ────────────────────────────────────────────────────

    /// Build a tensor from a flat row-major buffer. Errors if the buffer
    /// length does not match the shape product.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(AutodiffError::LengthMismatch {
                op: "from_vec",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::raw(data, shape.to_vec(), false))
    }

    /// Build a learnable tensor (requires_grad = true).
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        let t = Self::from_vec(data, shape)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Self::raw(vec![0.0; numel], shape.to_vec(), false)
    }

    /// Constant-filled tensor of the given shape.
    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Self::raw(vec![value; numel], shape.to_vec(), false)
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Self::raw(vec![value], vec![1], false)
    }

    /// Identity matrix of size `n × n`.
    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::raw(data, vec![n, n], false)
    }

    fn raw(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                data,
                shape,
                requires_grad,
                grad: None,
            })),
        }
    }

    // ── Shape accessors ─────────────────────────────────────────────────

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Number of rows, treating 1-D tensors as a single row.
    pub fn rows(&self) -> usize {
        let b = self.inner.borrow();
        match b.shape.len() {
            0 | 1 => 1,
            _ => b.shape[0],
        }
    }

    /// Number of columns, treating 1-D tensors as a single row.
    pub fn cols(&self) -> usize {
        let b = self.inner.borrow();
        match b.shape.len() {
            0 => 1,
            1 => b.shape[0],
            _ => b.shape[1],
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    // ── Data access ─────────────────────────────────────────────────────

    /// Borrow the flat data buffer.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.data.as_slice())
    }

    /// Copy the flat data buffer out.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Extract the single value of a scalar tensor.
    pub fn item(&self) -> Result<f64, AutodiffError> {
        let b = self.inner.borrow();
        if b.data.len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: b.shape.clone() });
        }
        Ok(b.data[0])
    }

    /// Value at `(row, col)` of a 2-D tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        let b = self.inner.borrow();
        let cols = match b.shape.len() {
            0 => 1,
            1 => b.shape[0],
            _ => b.shape[1],
        };
        b.data[row * cols + col]
    }

    /// Overwrite the data buffer (shape unchanged). Used by the optimizer
    /// and by finite-difference probes; never recorded on a tape.
    pub fn set_data(&self, data: &[f64]) {
        let mut b = self.inner.borrow_mut();
        assert_eq!(b.data.len(), data.len(), "set_data length mismatch");
        b.data.copy_from_slice(data);
    }

    /// Mutate data and gradient together (optimizer step). The closure
    /// receives `(data, grad)`; it is only called when a gradient exists.
    pub fn apply_update(&self, f: impl FnOnce(&mut [f64], &[f64])) {
        let mut b = self.inner.borrow_mut();
        let TensorData { data, grad, .. } = &mut *b;
        if let Some(g) = grad.as_deref() {
            // Split borrow: grad is read-only while data is mutated.
            let g = g.to_vec();
            f(data.as_mut_slice(), &g);
        }
    }

    /// True when every element is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.inner.borrow().data.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Number of elements exactly equal to 1.0.
    pub fn ones_count(&self) -> usize {
        self.inner.borrow().data.iter().filter(|&&x| x == 1.0).count()
    }

    /// Fraction of elements equal to 1.0 (fire rate of a binary tensor).
    pub fn ones_fraction(&self) -> f64 {
        let b = self.inner.borrow();
        if b.data.is_empty() {
            return 0.0;
        }
        let ones = b.data.iter().filter(|&&x| x == 1.0).count();
        ones as f64 / b.data.len() as f64
    }

    // ── Gradient plumbing ───────────────────────────────────────────────

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.inner.borrow_mut().requires_grad = flag;
    }

    /// Copy of the accumulated gradient, if any backward has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    /// Add `delta` into the stored gradient (allocating zeros on first use).
    pub fn accumulate_grad(&self, delta: &[f64]) {
        let mut b = self.inner.borrow_mut();
        assert_eq!(b.data.len(), delta.len(), "gradient length mismatch");
        let grad = b.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Drop the stored gradient.
    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Stable identity of the underlying storage (for registries / tests).
    pub fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Detached copy: same data, fresh storage, requires_grad = false.
    pub fn detached_copy(&self) -> Tensor {
        let b = self.inner.borrow();
        Self::raw(b.data.clone(), b.shape.clone(), false)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.inner.borrow();
        let head: Vec<f64> = b.data.iter().take(8).copied().collect();
        write!(
            f,
            "Tensor{{shape: {:?}, requires_grad: {}, data[..{}]: {:?}{}}}",
            b.shape,
            b.requires_grad,
            head.len(),
            head,
            if b.data.len() > 8 { ", …" } else { "" }
        )
    }
}
