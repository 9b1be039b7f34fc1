use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; every violation found is listed.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A caller broke a documented precondition (non-symmetric `P`,
    /// non-positive gain, empty block, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The coupled simulation produced a non-finite value.
    #[error("divergence at t = {time} ms: {detail}")]
    Divergence { time: f64, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Process exit code: 1 for runtime divergence, 2 for configuration
    /// and usage problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 1,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
