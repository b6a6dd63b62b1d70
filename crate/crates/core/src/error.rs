use std::path::PathBuf;

/// Errors raised by the solver stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid user-facing configuration (bad parameter, unknown key, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("operator assembly failed: {0}")]
    Assembly(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A certified inequality did not hold numerically.
    #[error("inequality `{inequality}` violated (margin {margin:e})")]
    Barrier { inequality: String, margin: f64 },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Format(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
