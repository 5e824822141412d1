use thiserror::Error;

/// Error type shared across the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("test function support violation: {0}")]
    Support(String),
    #[error("newton iteration failed: {0}")]
    Newton(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("time step constraint violated: {0}")]
    TimeStep(String),
    #[error("interface tracking failed: {0}")]
    Tracking(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("field format: {0}")]
    FieldFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
