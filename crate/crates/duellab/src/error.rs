use std::path::PathBuf;

/// Crate-wide error type.
///
/// The CLI maps these onto process exit codes: configuration problems
/// (anything wrong before the first round runs) exit with 2, runtime
/// failures inside a sweep exit with 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a precondition (non-finite value, wrong range, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A zero-norm vector was asked to be normalized.
    #[error("degenerate context: zero-norm vector cannot be normalized")]
    DegenerateContext,

    /// Dimensions of two objects that must agree do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A computation produced a non-finite value or a factorization broke down.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// An operation was called in the wrong phase of the select/observe cycle.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A configuration file or preset is invalid. The message names the
    /// offending key path where one exists.
    #[error("config error: {0}")]
    Config(String),

    /// A data or results file failed to parse; `line` is 1-based.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Results passed to aggregation disagree on length or identifiers.
    #[error("aggregation mismatch: {0}")]
    Aggregation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate a bad configuration rather than a
    /// failure while running (used for exit-code mapping).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
