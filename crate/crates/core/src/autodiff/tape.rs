use std::cell::{Cell, RefCell};

use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// One recorded operation: reads its output gradient, accumulates into its
/// input gradients. Ops hold tensor handles, so clearing the op list releases
/// every saved intermediate.
pub trait TapeOp {
    fn backward(&self);
}

/// Ordered record of executed operations for one forward pass.
///
/// Recording tapes are rebuilt per forward pass; inference tapes execute the
/// same ops without recording (and without gradient bookkeeping).
pub struct Tape {
    ops: RefCell<Vec<Box<dyn TapeOp>>>,
    recording: bool,
    consumed: Cell<bool>,
    /// Optional fingerprint of relu signs / pool argmaxes, used by the
    /// finite-difference checker to detect kink crossings between its two
    /// perturbed evaluations.
    kink_hash: Cell<u64>,
    kink_tracking: Cell<bool>,
}

impl Tape {
    /// Recording tape for a training forward pass.
    pub fn new() -> Tape {
        Tape {
            ops: RefCell::new(Vec::new()),
            recording: true,
            consumed: Cell::new(false),
            kink_hash: Cell::new(0xcbf2_9ce4_8422_2325),
            kink_tracking: Cell::new(false),
        }
    }

    /// Evaluation-only tape: values flow, nothing is recorded.
    pub fn inference() -> Tape {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn recording(&self) -> bool {
        self.recording && !self.consumed.get()
    }

    pub fn op_count(&self) -> usize {
        self.ops.borrow().len()
    }

    pub(crate) fn record(&self, op: Box<dyn TapeOp>) {
        if self.recording() {
            self.ops.borrow_mut().push(op);
        }
    }

    /// Reverse-topological sweep from a scalar loss. Execution order is the
    /// recording order reversed, so every op is visited exactly once and all
    /// fan-out gradients accumulate by summation. Clears the tape.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !self.recording {
            return Err(CoreError::InvalidInput(
                "backward on an inference tape".into(),
            ));
        }
        if self.consumed.get() {
            return Err(CoreError::StaleTape);
        }
        if !loss.is_scalar() {
            return Err(CoreError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        self.consumed.set(true);
        loss.accum_grad(&[1.0]);
        let mut ops = self.ops.borrow_mut();
        for op in ops.iter().rev() {
            op.backward();
        }
        ops.clear();
        Ok(())
    }

    pub fn enable_kink_tracking(&self) {
        self.kink_tracking.set(true);
    }

    pub(crate) fn kink_tracking(&self) -> bool {
        self.kink_tracking.get()
    }

    /// FNV-1a fold of nonlinearity decisions (relu signs, argmax picks).
    pub(crate) fn fold_kink(&self, word: u64) {
        let mut h = self.kink_hash.get();
        h ^= word;
        h = h.wrapping_mul(0x1000_0000_01b3);
        self.kink_hash.set(h);
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_hash.get()
    }

    /// Fold another tape's nonlinearity fingerprint into this one (used by
    /// composite ops that run chunks on inner tapes).
    pub fn absorb_kinks(&self, inner: &Tape) {
        if self.kink_tracking() {
            self.fold_kink(inner.kink_signature());
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
