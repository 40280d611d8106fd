use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ellipse {index} extends outside the canvas")]
    EllipseOutsideCanvas { index: usize },

    #[error("axis of length {len} is too short for a second difference (need at least 3)")]
    AxisTooShort { len: usize },

    #[error("electronic noise sigma must be positive for the likelihood model")]
    ZeroSigma,

    #[error("log-factorial of negative integer {0}")]
    NegativeFactorial(i64),

    #[error("activation cache does not match network parameters: {0}")]
    CacheMismatch(String),

    #[error("empty training set: {0}")]
    EmptyTrainingSet(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown sinogram kind {0}")]
    UnknownKind(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: {0}")]
    ConfigValidation(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("manifest conflict in {}: {message}", .dir.display())]
    ManifestConflict { dir: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for validation failures, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::MissingInput(_) => 3,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnknownKind(_)
            | Error::Truncated { .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn check_shape(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, actual })
    }
}
