use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is singular (smallest singular value {smallest:e} below 1e-300)")]
    SingularMatrix { smallest: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("maps are not contractions: alpha_+ = {alpha_plus} >= 1")]
    NotAContraction { alpha_plus: f64 },

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("{count} words exceed the enumeration cap {cap}")]
    CapExceeded { count: f64, cap: u64 },

    #[error("sequences agree on all {len} realized symbols")]
    Indistinguishable { len: usize },

    #[error("alphabet mismatch: expected {expected} symbols, found {found}")]
    AlphabetMismatch { expected: usize, found: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("no sign change of the pressure in s for q = {q} below s = {s_cap}")]
    BracketFailure { q: f64, s_cap: f64 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("scaling window has {available} radii, at least {required} needed")]
    WindowTooNarrow { available: usize, required: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
