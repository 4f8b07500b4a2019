//! Dense and sparse (CSR) linear algebra plus a finite-difference gradient
//! checker.
//!
//! These kernels are the numeric foundation of the crate. They are generic
//! over [`crate::Scalar`] and deliberately deterministic: every reduction has
//! a documented accumulation order, so repeated runs produce bit-identical
//! results on the same platform.

mod dense;
mod gradcheck;
mod sparse;

pub use dense::DenseMatrix;
pub use gradcheck::{fd_gradient, max_rel_err};
pub use sparse::{masked_outer, CsrMatrix, SparsityPattern};
