use thiserror::Error;

/// Errors raised by the solver, the oracle and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The search direction vanished (or lies numerically in the kernel of
    /// the Hessian); callers treat this as convergence.
    #[error("degenerate search direction")]
    DegenerateDirection,

    #[error("oracle refused: {unknowns} unknowns exceeds the limit of {limit}")]
    OracleTooLarge { unknowns: usize, limit: usize },

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
