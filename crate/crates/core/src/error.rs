use std::path::PathBuf;

/// Errors produced by the proposal-generation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value or shape violates an operation's precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Input is well-formed but mathematically degenerate (zero norm and the like).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    /// A sample pool is too small to draw a triplet from.
    #[error("video {video_id} instance {instance}: {reason}")]
    InsufficientPool {
        video_id: String,
        instance: usize,
        reason: String,
    },

    #[error("no trainable triplets in dataset")]
    NoTrainableTriplets,

    /// Exhaustive search would enumerate too many candidates.
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("cannot place actions: {0}")]
    Placement(String),

    #[error("no ground-truth instances to evaluate against")]
    NoGroundTruth,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
