use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("message-passing graph would hold {predicted} links, exceeding the cap of {cap}")]
    LinkCapExceeded { predicted: u64, cap: u64 },

    #[error("split produced an empty {0} partition")]
    EmptySplit(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("batch at time {batch_time} arrived behind the watermark {watermark}")]
    OutOfOrder { batch_time: f64, watermark: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape { op, left: left.to_vec(), right: right.to_vec() }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
