use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("invalid group element {element} (group order {order})")]
    InvalidElement { element: usize, order: usize },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("warp parameter {r} outside declared range [-{max}, {max}]")]
    OutOfRange { r: f64, max: f64 },
    #[error("image must be normalized before projection")]
    NotNormalized,
    #[error("pooling window is empty")]
    EmptyWindow,
    #[error("template bank is empty")]
    EmptyBank,
    #[error("signatures were computed with different banks, pooling or windows")]
    IncompatibleSignatures,
    #[error("Lipschitz budget exceeded: N*L = {0} > 1")]
    LipschitzBudgetExceeded(f64),
    #[error("orbits are not pairwise distinct: images {0} and {1} share an orbit")]
    OrbitsNotDistinct(usize, usize),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(expected: impl ToString, got: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
