use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "conjugate gradient did not converge in {iterations} iterations \
         (relative residual {residual:.3e})"
    )]
    CgNotConverged {
        iterations: usize,
        residual: f64,
        /// Relative residual recorded every iteration.
        trace: Vec<f64>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("dtype mismatch: {0}")]
    DtypeMismatch(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("non-finite loss at batch sample {index}")]
    NonFiniteLoss { index: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
