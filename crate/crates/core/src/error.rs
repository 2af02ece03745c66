use thiserror::Error;

#[derive(Debug, Error)]
pub enum CceError {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed call: wrong sizes, unsupported dimension, inconsistent inputs.
    #[error("usage error: {0}")]
    Usage(String),
    /// A state or profile that cannot come from a solution.
    #[error("infeasible state: {0}")]
    Infeasible(String),
    /// Numerical breakdown inside the solver.
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("config error at line {line}, key `{key}`: {msg}")]
    Config { line: usize, key: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CceError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(CceError::Domain(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CceError::Usage(msg.into()))
}
