use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition (shape, sign, missing constant).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The input lies outside the domain of the operation (e.g. a factor that is not positive definite).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    /// An optimization produced a non-finite iterate.
    #[error("iterate became non-finite at iteration {iteration}")]
    Diverged { iteration: u64 },

    /// An experiment configuration is malformed or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
