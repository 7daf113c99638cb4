use thiserror::Error;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qubit count {n}: {reason}")]
    QubitCount { n: usize, reason: &'static str },

    #[error("population {value} of qubit {qubit} is outside [0, 1]")]
    Population { qubit: usize, value: f64 },

    #[error("qubit index {index} out of range for a {n}-qubit network")]
    QubitIndex { index: usize, n: usize },

    #[error("invalid gate pair ({a}, {b}): {reason}")]
    Pair { a: usize, b: usize, reason: &'static str },

    #[error("no perfect matching exists on {0}")]
    NoMatching(String),

    #[error("matching index {index} out of range for a catalog of {len}")]
    MatchingIndex { index: usize, len: usize },

    #[error("emergent network has no observed layers")]
    EmptyEmergent,

    #[error("singular effective temperature at population {0}")]
    SingularTemperature(f64),

    #[error("map has lambda_z = 1 and no unique fixed point")]
    NoFixedPoint,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient or inconsistent data: {0}")]
    Data(String),

    #[error("numerical invariant violated: {0}")]
    Invariant(String),

    #[error("exponential fit did not converge (residual {residual:.3e})")]
    FitDiverged { residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by user input rather than I/O or numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Invariant(_)
        )
    }

    pub fn is_io_error(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
