use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("decomposition infeasible: {0}")]
    DecompositionInfeasible(String),

    #[error("rank {rank} not found in layout")]
    RankNotFound { rank: usize },

    #[error("index {index:?} out of chunk box (offset {offset:?}, extent {extent:?})")]
    IndexOutOfBox {
        index: (usize, usize, usize),
        offset: (usize, usize, usize),
        extent: (usize, usize, usize),
    },

    #[error("unsupported transform: {0}")]
    UnsupportedTransform(String),

    #[error("plan mismatch: {0}")]
    PlanMismatch(String),

    #[error("unknown chunk id {0}")]
    UnknownChunk(usize),

    #[error("dependency cycle detected among {0} pending tasks")]
    DeadlockDetected(usize),

    #[error("peer rank {peer} out of range (size {size})")]
    PeerOutOfRange { peer: usize, size: usize },

    #[error("message truncated: received {got} bytes into a {want}-byte buffer")]
    MessageTruncation { got: usize, want: usize },

    #[error("operation unsupported on this backend: {0}")]
    UnsupportedBackend(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("buffer capacity overflow: need {need} bytes, have {have}")]
    CapacityOverflow { need: usize, have: usize },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative delay not allowed")]
    NegativeDelay,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
