use std::path::PathBuf;

use thiserror::Error;
use transrx_numerics::NumericsError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("equalizer: singular system (zero channel estimate with zero noise power)")]
    SingularEqualizer,

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint: unsupported format version (expected {expected}, found {found})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("results file: {0}")]
    Results(String),

    #[error("image: {0}")]
    Image(String),

    #[error("training: {0}")]
    Training(String),

    #[error("block {block}: {source}")]
    Block {
        block: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
