use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not line up for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A tweet became empty somewhere in the preprocessing pipeline.
    #[error("degenerate tweet: {0}")]
    DegenerateTweet(String),

    /// A caller violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input data.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A label value outside the configured label set.
    #[error("unknown label {value:?} at {path}:{line}")]
    Label {
        path: String,
        line: usize,
        value: String,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
