use thiserror::Error;

/// Errors raised by the library. Each variant maps onto one of the process
/// exit classes used by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("solver failed: {message} (worst residual {worst_residual:.3e})")]
    Solver {
        message: String,
        worst_residual: f64,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("invariant check failed: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::Evaluation(_) => "evaluation",
            Error::Unsupported(_) => "unsupported",
            Error::Solver { .. } => "solver",
            Error::Numerical(_) => "numerical",
            Error::ResourceCap(_) => "resource_cap",
            Error::Invariant(_) => "invariant",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 1 for bad input, 2 for solver or numerical
    /// failures, 3 for resource caps.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Domain(_)
            | Error::Evaluation(_)
            | Error::Unsupported(_)
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::Solver { .. } | Error::Numerical(_) | Error::Invariant(_) => 2,
            Error::ResourceCap(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
