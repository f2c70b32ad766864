use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    TraceParse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("action {action} out of range for {sensors} sensors")]
    ActionOutOfRange { action: usize, sensors: usize },
    #[error("invalid probability distribution: {0}")]
    Distribution(String),
    #[error("checkpoint config hash {checkpoint} does not match config hash {config}")]
    HashMismatch { checkpoint: String, config: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
