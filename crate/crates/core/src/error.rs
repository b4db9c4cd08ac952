use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    Shape {
        axis: String,
        expected: usize,
        actual: usize,
    },
    #[error("degenerate output: {0}")]
    Degenerate(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Problems decoding the on-disk tensor, checkpoint, and manifest formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("dimension overflow: {0}")]
    DimOverflow(String),
    #[error("tensor has no dimensions")]
    EmptyDims,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype {found} (expected {expected})")]
    UnsupportedDtype { expected: u32, found: u32 },
    #[error("invalid tensor name: {0}")]
    BadName(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn shape(axis: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
