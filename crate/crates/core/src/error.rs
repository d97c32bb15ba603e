use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("timestamp {timestamp} is not aligned to the {resolution_min}-minute resolution")]
    Misaligned {
        timestamp: Timestamp,
        resolution_min: i64,
    },

    #[error("capacity exceeded at period {period}: need {required:.6} kW, {available:.6} kW available")]
    Capacity {
        period: usize,
        required: f64,
        available: f64,
    },

    #[error("undefined price: {0}")]
    UndefinedPrice(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("instance too large for an exact solve ({requests} requests x {periods} periods); enable the heuristic")]
    TooLarge { requests: usize, periods: usize },

    #[error("{}:{row}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("{}: duplicate row for household {household} at {timestamp}", path.display())]
    Duplicate {
        path: PathBuf,
        household: String,
        timestamp: Timestamp,
    },

    #[error("coverage: {0}")]
    Coverage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than engine state.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Capacity { .. })
    }
}
