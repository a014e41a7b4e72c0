use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("nonconvergence: {message}; trace = {trace:?}")]
    NonConvergence { message: String, trace: Vec<f64> },
    #[error("convergence failure: {message}; trace = {trace:?}")]
    ConvergenceFailure { message: String, trace: Vec<f64> },
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("singular linear system for mode {mode}")]
    SingularMode { mode: i64 },
    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),
    #[error("corrupt dump: {0}")]
    Corruption(String),
    #[error("unsupported dump version: {0}")]
    Version(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
