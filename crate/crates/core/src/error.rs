use std::path::PathBuf;

use crate::maskgen::ConstraintReport;

/// Errors produced by the attack pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("unsupported bit depth {depth} in {path} (only 8-bit is supported)")]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("mask search failed after {attempts} attempts (last: {last})")]
    SearchFailed {
        attempts: usize,
        last: ConstraintReport,
    },

    #[error("mask violates constraints: {0}")]
    ConstraintViolation(ConstraintReport),

    #[error("attack diverged at step {step}: loss is {loss}")]
    AttackDiverged { step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
