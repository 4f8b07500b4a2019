//! Sparse graph-conditioned self-attention over source-code graphs.
//!
//! The crate provides the full pipeline from a mini-language source string to
//! a trained encoder:
//!
//! * [`linalg`]: dense and CSR kernels plus a finite-difference gradient
//!   checker; everything numeric downstream is built on these.
//! * [`lang`]: lexer, recursive-descent parser and AST for the mini
//!   language.
//! * [`graph`]: fused token/AST graphs, synthetic masks, corpus statistics
//!   and the JSON interchange format.
//! * [`diffusion`]: the truncated attention-diffusion recurrence, its dense
//!   series oracle and the reverse-mode gradient.
//! * [`attention`]: one multi-head sparse attention layer with edge-type
//!   query bias, a dense reference implementation and analytic backward.
//! * [`encoder`]: embeddings, positional encoding, layer norm, feed-forward,
//!   dropout, the full encoder stack and the checkpoint format.
//! * [`tasks`]: the synthetic variable-misuse task with dataset generation,
//!   pointer heads, Adam training loop and the shallow/deep ensemble.
//! * [`bench`]: allocation-instrumented scaling benchmarks with log-log
//!   exponent fits.
//!
//! The linear algebra layer is generic over [`Scalar`]; the model stack is
//! pinned to [`Real`] (`f64`) so that tolerance-based contracts (gradient
//! checks, sparse/dense equivalence) are meaningful.

pub mod attention;
pub mod bench;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod lang;
pub mod linalg;
pub mod scalar;
pub mod tasks;

pub use error::{Error, Result};
pub use linalg::{CsrMatrix, DenseMatrix, SparsityPattern};
pub use scalar::Scalar;

/// Scalar type every model-level component is pinned to.
///
/// The numeric kernels in [`linalg`] stay generic; use `DenseMatrix<f32>`
/// explicitly if you can tolerate the precision loss.
pub type Real = f64;

/// Derives an independent RNG seed from a base seed and a stream index
/// (splitmix-style finalizer). Dropout sites, epoch shuffles and per-sample
/// noise each get their own stream so adding one consumer never shifts
/// another's draws.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
