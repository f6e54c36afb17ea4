use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` is registered more than once")]
    DuplicateParam(String),

    #[error("parameter `{0}` is not covered by any optimizer group")]
    UngroupedParam(String),

    #[error("sequence of length {len} exceeds max_seq {max_seq} (prefix {prefix} + tokens {tokens})")]
    SequenceTooLong {
        len: usize,
        max_seq: usize,
        prefix: usize,
        tokens: usize,
    },

    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },

    #[error("artifact was built for a different {what}: expected {expected}, found {found}")]
    Mismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("malformed weight file: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),

    #[error("token {token} is not allowed in the current decode state")]
    DisallowedToken { token: u32 },

    #[error("data error: {0}")]
    Data(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("infeasible split, labels below minimum counts: {0:?}")]
    InfeasibleSplit(Vec<String>),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    Undefined(String),

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
}
