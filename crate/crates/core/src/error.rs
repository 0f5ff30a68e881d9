use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("non-finite loss encountered at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("parse error at offset {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("missing representation `{0}`")]
    MissingRepresentation(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("unit mismatch: {0}")]
    UnitMismatch(String),

    #[error("refusing to open sealed ground truth at {0} outside evaluation")]
    SealedAccess(PathBuf),

    #[error("graph topology missing")]
    TopologyMissing,

    #[error("stage `{stage}` failed (seed {seed}): {message}")]
    Stage {
        stage: String,
        seed: u64,
        message: String,
    },

    #[error("run directory {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
