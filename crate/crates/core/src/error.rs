use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {what}: {left:?} vs {right:?}")]
    Shape {
        what: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate batch: batchnorm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format: {0}")]
    Format(String),

    #[error("class has no ground truth; average precision is undefined")]
    UndefinedClass,

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
