use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward root must be a scalar of shape [1], got {0:?}")]
    InvalidRoot(Vec<usize>),

    #[error("non-finite value produced by {op}")]
    Numeric { op: &'static str },

    #[error("batch normalization needs more than one element per channel in training mode")]
    DegenerateBatch,

    #[error("invalid block width: {0}")]
    InvalidWidth(String),

    #[error("res path level must be in 1..=4, got {0}")]
    InvalidLevel(usize),

    #[error("execution is only supported for rank-2 models, got rank {0}")]
    UnsupportedRank(usize),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("image/mask pairing error: {0}")]
    Pairing(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure at epoch {epoch}: {source}")]
    TrainingAborted {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by non-finite arithmetic, including those
    /// wrapped by the training loop.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric { .. } => true,
            Error::TrainingAborted { .. } => true,
            _ => false,
        }
    }
}
