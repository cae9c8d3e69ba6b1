use thiserror::Error;

/// Errors produced by the clustering and reduction routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AtcError {
    #[error("vector at row {row} has norm {norm:e}, below the floor {floor:e}")]
    ZeroNormVector { row: usize, norm: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),

    #[error("clusters overlap at member {0}")]
    OverlappingClusters(usize),

    #[error("invalid stopping rule: {0}")]
    InvalidStop(String),

    #[error("block {block} is outside 0..{blocks}")]
    BlockOutOfRange { block: usize, blocks: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("assignment does not match the sequence: {0}")]
    MisalignedAssignment(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot merge {t} pairs from {unprotected} tokens; bipartite matching keeps at least half")]
    KeepRateTooLow { t: usize, unprotected: usize },

    #[error("token size at index {0} must be at least 1")]
    NonPositiveSize(usize),

    #[error("unsupported engine: {0}")]
    UnsupportedEngine(String),

    #[error("unknown {kind} `{value}`")]
    UnknownVariant { kind: &'static str, value: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = AtcError> = std::result::Result<T, E>;
