use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("integrity error for claim {claim_no}: {message}")]
    Integrity { claim_no: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("triangle is empty")]
    EmptyTriangle,

    #[error("development factor undefined: column {column} has zero volume")]
    Factor { column: usize },

    #[error("zero ultimate claim count for accident period {ap}")]
    ZeroUltimateCount { ap: u32 },

    #[error("initialisation error: {0}")]
    Init(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("leakage detected: {0}")]
    Leakage(String),

    #[error("fold interval S{interval} has no validation claims")]
    EmptyFold { interval: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for data
    /// problems, 3 for numeric faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) | Error::Dimension { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
