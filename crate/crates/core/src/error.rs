use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the command line tool to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside the domain of {system}: {reason}")]
    Domain { system: &'static str, reason: String },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("generator has zero norm")]
    ZeroGenerator,

    #[error("implicit midpoint solve did not converge at step {step}")]
    NonConvergence { step: usize },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("non-finite value during {context}")]
    NonFinite { context: String },

    #[error("empty data: {0}")]
    Empty(String),

    #[error("metadata mismatch: {0}")]
    Mismatch(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidParameters(_) => ErrorClass::Config,
            Error::DimensionMismatch { .. }
            | Error::Empty(_)
            | Error::Mismatch(_)
            | Error::Format { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::Domain { .. }
            | Error::SingularMatrix
            | Error::ZeroGenerator
            | Error::NonConvergence { .. }
            | Error::StepUnderflow { .. }
            | Error::NonFinite { .. } => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
