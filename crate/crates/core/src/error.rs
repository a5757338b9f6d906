use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("solution {0} is not in the archive")]
    UnknownSolution(u64),
    #[error("archive is empty")]
    EmptyArchive,
    #[error("no path from start to goal")]
    NoPath,
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
