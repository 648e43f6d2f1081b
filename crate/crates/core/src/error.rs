use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("diverged at round {round}, client {client}, local step {step}")]
    Divergence {
        round: u64,
        client: usize,
        step: usize,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FedError {
    pub fn param(msg: impl Into<String>) -> Self {
        FedError::Parameter(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        FedError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors signalling a diverged iterate rather than a misuse.
    pub fn is_divergence(&self) -> bool {
        matches!(self, FedError::Divergence { .. } | FedError::NonFinite { .. })
    }
}
