use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("class {0} has zero frequency")]
    ZeroFrequency(usize),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(&'static str),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("dataset is not class-balanced (counts range {min}..={max})")]
    Imbalanced { min: usize, max: usize },

    #[error("dataset carries no cluster model; a balanced twin cannot be drawn")]
    NoClusterModel,

    #[error("bad magic bytes: expected `LTDS`, found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("truncated payload: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated {
        offset: usize,
        needed: usize,
        len: usize,
    },

    #[error("malformed data at {location}: {message}")]
    Malformed { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
