use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("gamma function pole at argument {0}")]
    Pole(f64),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite value in state at step {step}")]
    NonFinite { step: usize },

    #[error("eigenvalue computation did not converge")]
    EigenFailure,

    #[error("system is not controllable at horizon {horizon} (rank {rank} < {n})")]
    NotControllable { horizon: usize, rank: usize, n: usize },

    #[error("system is not observable at horizon {horizon} (rank {rank} < {n})")]
    NotObservable { horizon: usize, rank: usize, n: usize },

    #[error("{0} is not symmetric positive definite")]
    NotSpd(String),

    #[error("innovation matrix C M C^T + R is numerically singular")]
    InnovationSingular,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear state constraints admit no input within the bounds")]
    InfeasibleStateConstraints,

    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (singular systems, infeasibility,
    /// divergence) as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Pole(_)
                | Error::Singular(_)
                | Error::NonFinite { .. }
                | Error::EigenFailure
                | Error::NotControllable { .. }
                | Error::NotObservable { .. }
                | Error::InnovationSingular
                | Error::DegenerateData(_)
                | Error::InfeasibleStateConstraints
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
