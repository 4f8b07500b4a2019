//! Crate-wide error type.
//!
//! One enum covers every layer so that errors compose through the stack
//! without conversion boilerplate; variants carry enough context to be
//! actionable from a CLI message.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("row {0} has no structural entries")]
    EmptyRow(usize),

    #[error("non-finite output: {0}")]
    NonFiniteOutput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown character {ch:?} at byte offset {offset}")]
    UnknownCharacter { ch: char, offset: usize },

    #[error("syntax error at token {position}: expected {expected}, found {found}")]
    SyntaxError {
        position: usize,
        expected: String,
        found: String,
    },

    #[error("token {0} is not covered by any AST node")]
    UncoveredToken(usize),

    #[error("wrong kind: {0}")]
    WrongKind(String),

    #[error("density {density} is too low for {nodes} nodes: the mandatory self-loops alone exceed the entry budget")]
    DensityTooLow { density: f64, nodes: usize },

    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("loss diverged at epoch {epoch}: {value}")]
    DivergedLoss { epoch: usize, value: f64 },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    #[error("memory budget exceeded: {0}")]
    OutOfMemory(String),

    #[error("allocator instrumentation is not installed in this binary")]
    AllocatorNotInstrumented,

    #[error("tolerance exceeded in {context}: {value:e} > {limit:e}")]
    ToleranceExceeded {
        context: String,
        value: f64,
        limit: f64,
    },

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an I/O error with a short description of the failed operation.
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
