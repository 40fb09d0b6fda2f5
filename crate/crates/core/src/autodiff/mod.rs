//! Dense f64 tensors with reverse-mode differentiation.
//!
//! A [`Tape`] records every differentiable operation executed during a
//! forward pass (define-by-run); [`Tape::backward`] replays the record in
//! reverse, accumulating gradients into every tensor that needs them. The
//! tape is rebuilt on every forward pass and cleared by backward.
//!
//! All arithmetic is 64-bit. Kernels parallelize only over disjoint output
//! partitions, so results are bitwise identical regardless of thread count.

pub mod conv;
pub mod gemm;
pub mod gradcheck;
pub mod ops;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use sparse::Csr;
pub use tape::Tape;
pub use tensor::Tensor;
