use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("missing observations for (unit, time): {}", format_cells(.0))]
    MissingData(Vec<(String, String)>),

    #[error("duplicate observation for unit {unit} at time {time}")]
    DuplicateObservation { unit: String, time: String },

    #[error("parse error at row {row}: {message}")]
    ParseError { row: usize, message: String },

    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("dimension mismatch: {0}")]
    DimensionError(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverError { iterations: usize, residual: f64 },

    #[error("solver failed at lambda = {lambda}: {source}")]
    LambdaFailed {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("anchor index {anchor} out of range for {k} predictors")]
    InfeasibleAnchor { anchor: usize, k: usize },

    #[error("cannot rescale predictor weights: all entries are zero")]
    AllZero,

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("factor Gram matrix is singular (smallest eigenvalue {0:.3e})")]
    SingularFactorGram(f64),

    #[error("insufficient donors: need at least {needed}, have {have}")]
    InsufficientDonors { needed: usize, have: usize },

    #[error("estimator failed on placebo draw {draw}: {source}")]
    EstimatorError {
        draw: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} replications failed (limit 5%); first error: {first}")]
    StudyFailed {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("domain error: {0}")]
    DomainError(String),
}

impl Error {
    /// True for errors originating in input data or configuration rather than numerics.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::MissingData(_)
            | Error::DuplicateObservation { .. }
            | Error::ParseError { .. }
            | Error::ConfigError(_)
            | Error::DimensionError(_)
            | Error::InfeasibleAnchor { .. }
            | Error::DegenerateDesign(_)
            | Error::InsufficientDonors { .. }
            | Error::DomainError(_) => true,
            Error::EstimatorError { source, .. } | Error::LambdaFailed { source, .. } => {
                source.is_data_error()
            }
            _ => false,
        }
    }
}

fn format_cells(cells: &[(String, String)]) -> String {
    const SHOWN: usize = 10;
    let mut out = cells
        .iter()
        .take(SHOWN)
        .map(|(u, t)| format!("({u}, {t})"))
        .collect::<Vec<_>>()
        .join(", ");
    if cells.len() > SHOWN {
        out.push_str(&format!(" and {} more", cells.len() - SHOWN));
    }
    out
}
