use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Dense multidimensional f64 array, row-major, shared by handle.
///
/// Values are written once at construction (optimizer updates between tapes
/// are the one sanctioned mutation); gradients accumulate during backward.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    /// Leaf parameter: receives a gradient callers read after backward.
    requires_grad: bool,
    /// On a differentiable path: backward must propagate through it.
    needs_grad: bool,
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, needs_grad: bool) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {:?} does not match value count {}",
            shape,
            values.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                needs_grad,
            }),
        }
    }

    /// Non-differentiable data (inputs, adjacency constants).
    pub fn constant(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::build(shape, values, false, false)
    }

    /// Learnable leaf; backward populates its gradient.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::build(shape, values, true, true)
    }

    /// Intermediate produced by an op; `needs_grad` says whether any input
    /// was on a differentiable path.
    pub(crate) fn intermediate(shape: Vec<usize>, values: Vec<f64>, needs_grad: bool) -> Tensor {
        Tensor::build(shape, values, false, needs_grad)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(vec![], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::constant(shape, vec![0.0; n])
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.needs_grad
    }

    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    /// In-place mutation; reserved for optimizer updates between tapes.
    pub fn values_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.values.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Extract a scalar value; panics if the tensor has more than one element.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape());
        self.inner.values.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.inner.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient buffer, allocating zeros on first use.
    pub(crate) fn accum_grad(&self, delta: &[f64]) {
        if !self.inner.needs_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Hand a freshly computed gradient buffer over without copying when the
    /// slot is still empty.
    pub(crate) fn accum_grad_owned(&self, delta: Vec<f64>) {
        if !self.inner.needs_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}
