use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("undefined delay: {0}")]
    UndefinedDelay(String),

    #[error("empty accumulator: no slots recorded")]
    EmptyAccumulator,

    #[error("invalid channel model: {0}")]
    Channel(String),

    #[error("reducible transition matrix: stationary law is not unique")]
    Reducible,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("infeasible constraint targets: {0}")]
    Infeasible(String),

    #[error("unreachable destination: node {node} cannot reach {destination}")]
    Unreachable { node: usize, destination: usize },

    #[error("policy/scenario mismatch: {0}")]
    Mismatch(String),

    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
