use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The observed product `dl/dmu * mu` lies below the minimum of
    /// `-mu / (1 + e^mu)`, so no logit can explain the gradients.
    #[error("no logit reproduces g = {g:.6e} (minimum attainable is {g_min:.6e})")]
    NoMuSolution { g: f64, g_min: f64 },

    #[error("label is indeterminate: every last-layer gradient entry is zero")]
    IndeterminateLabel,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("activation inversion out of domain: {0}")]
    InversionDomain(String),

    #[error("no twin exists: the logit is uniquely determined by the gradients")]
    NoTwin,

    #[error("no virtual constraints: previous layer is not overdetermined with full column rank")]
    NoVirtualConstraints,

    #[error("optimization diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at byte {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that stem from numerics (inconsistent gradients,
    /// SVD breakdown) rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure(_)
                | Error::NoMuSolution { .. }
                | Error::InversionDomain(_)
                | Error::Divergence { .. }
                | Error::IndeterminateLabel
        )
    }
}
