use thiserror::Error;

use crate::ipm::SolverReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),

    #[error("tau = {tau} lies outside the basis interval [{lower}, {upper}]")]
    TauOutOfRange { tau: f64, lower: f64, upper: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("problem needs {rows} constraint rows, above the configured cap of {cap}")]
    DimensionOverflow { rows: usize, cap: usize },

    #[error("degenerate scale factor: {0}")]
    DegenerateScale(String),

    #[error("constraint matrix is rank deficient (pivot {pivot:e} at column {column})")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("solver hit the iteration cap ({})", .0.iterations)]
    IterationLimit(Box<SolverReport>),

    #[error("solver step collapsed at iteration {}", .0.iterations)]
    StepCollapse(Box<SolverReport>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quantile level {index} (tau = {tau}): {source}")]
    Level {
        index: usize,
        tau: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("no smoothing parameter given; pass a spar or c, or run model selection")]
    MissingSmoothing,

    #[error("criterion undefined: {0}")]
    Criterion(String),

    #[error("bootstrap failed: {failed} of {total} replicates could not be fitted")]
    Bootstrap { failed: usize, total: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error comes from an optimizer rather than from the inputs.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::IterationLimit(_)
            | Error::StepCollapse(_)
            | Error::Numerical(_)
            | Error::Bootstrap { .. } => true,
            Error::Level { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
