use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid vertex condition at {vertex}: {reason}")]
    InvalidCondition { vertex: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("problem too large for dense solver: {dofs} constrained unknowns (limit {limit})")]
    TooLarge { dofs: usize, limit: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("series tail estimate {estimate:.3e} exceeds tolerance {tol:.3e}")]
    SeriesTail { estimate: f64, tol: f64 },
    #[error("ambiguous zero-mode gap: eigenvalue {lambda:.3e} lies between tol0 = {tol0:.3e} and 100*tol0")]
    AmbiguousGap { lambda: f64, tol0: f64 },
    #[error("numerically singular matrix: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
