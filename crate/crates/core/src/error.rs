use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate mask row {row}")]
    DegenerateMaskRow { row: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate significance: uniform fallback required")]
    DegenerateSignificance,

    #[error("all selection weights are zero")]
    ZeroWeights,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("module capacity violation: {0}")]
    Capacity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
