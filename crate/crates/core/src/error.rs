use thiserror::Error;

/// Errors raised by the library. Solver non-convergence is not an error:
/// it is reported through the `converged` flag of the solve reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("domain has no boundary")]
    NoBoundary,

    #[error("field length {found} does not match grid node count {expected}")]
    GridMismatch { expected: usize, found: usize },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A standing assumption of the estimates is violated; `assumption` is
    /// the label of the hypothesis, e.g. `(In1)` or `(MFG3)`.
    #[error("assumption {assumption} violated: {message}")]
    Gate { assumption: String, message: String },

    #[error("no real roots: level {level} is not below the maximum {max} of phi")]
    NoRoots { level: f64, max: f64 },

    #[error("all samples have vanishing Laplacian")]
    AllHarmonic,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("sweep aborted at amplitude {amplitude}: solve did not converge")]
    SweepAborted { amplitude: f64 },

    #[error("config error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
