use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical failure modes (singular systems, stalled eigensolves) are
/// recoverable and carry enough context for the caller to decide; misuse
/// (mismatched spaces, bad arguments) is reported as such rather than
/// panicking so the CLI can map it to an exit code.
#[derive(Debug, Error)]
pub enum VkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    /// Point-evaluation outside the plate.
    #[error("out of domain: point ({x}, {y}) lies outside the plate")]
    OutOfDomain { x: f64, y: f64 },

    /// Factorization failed or the solve could not reach the residual
    /// tolerance. Expected at bifurcation points of the trivial branch.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// Eigensolver hit its iteration cap; whatever converged is attached.
    #[error("eigensolver failure: {message} ({n} of the requested values converged)", n = partial_values.len())]
    EigenFailure {
        message: String,
        partial_values: Vec<f64>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VkError>;
