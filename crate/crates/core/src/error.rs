use thiserror::Error;

/// Errors shared across the crate.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty batch passed to {op}")]
    EmptyBatch { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("tape already consumed by backward; run a fresh forward pass first")]
    StaleTape,

    #[error("NaN gradient in parameter {name}")]
    NanGradient { name: String },

    #[error("dense adjacency request for {requested} nodes exceeds limit {limit}; use the sparse loss path")]
    DenseLimit { requested: usize, limit: usize },

    #[error("bad magic in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported {what} version: file has {found}, this build reads {expected}")]
    BadVersion {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated or oversized {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
