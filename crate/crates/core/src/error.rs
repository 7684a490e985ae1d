use std::fmt;

use thiserror::Error;

/// Why a moment-equation fit produced no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonExistence {
    /// Some target degree lies outside the open interval `(0, n - 1)`.
    Range,
    /// The iteration cap was reached without convergence.
    IterationCap,
    /// `|theta|_inf` exceeded the divergence guard.
    Diverged,
    /// The Newton linear system was numerically singular.
    Singular,
    /// Steps vanished while the residual stayed above tolerance.
    Stalled,
}

impl fmt::Display for NonExistence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NonExistence::Range => "range",
            NonExistence::IterationCap => "iteration_cap",
            NonExistence::Diverged => "diverged",
            NonExistence::Singular => "singular",
            NonExistence::Stalled => "stalled",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("the estimate does not exist ({reason})")]
    NonExistent { reason: NonExistence },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
