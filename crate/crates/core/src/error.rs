use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    /// Gaussian elimination met a pivot too small to trust.
    #[error("{what} is singular or ill-conditioned (pivot magnitude {pivot:e})")]
    Singular { what: String, pivot: f64 },

    /// Overflow to inf/NaN. Divergence is an expected outcome in this crate,
    /// so callers usually turn this into a "diverges" verdict.
    #[error("numerical divergence: {what} produced non-finite values")]
    NonFinite { what: String },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
