use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition was not met by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("gradient descent did not converge: final gradient norm {grad_norm:e}")]
    NoConvergence { grad_norm: f64 },

    #[error("zero feature amplitude at indices {0:?}")]
    ZeroAmplitude(Vec<usize>),

    #[error("near-zero eigenvalues at indices {0:?}")]
    DegenerateSpectrum(Vec<usize>),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by the numbers rather than by the inputs'
    /// shape or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NotPsd { .. }
                | Error::Divergence { .. }
                | Error::NoConvergence { .. }
                | Error::DegenerateSpectrum(_)
                | Error::ZeroAmplitude(_)
        )
    }
}
