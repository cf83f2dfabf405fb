use thiserror::Error;

pub type Result<T, E = DcaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DcaError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid mask: no position is selected")]
    InvalidMask,

    #[error("degenerate norm: cosine similarity of a zero vector")]
    DegenerateNorm,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported analysis: {0}")]
    UnsupportedAnalysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DcaError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        DcaError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Process exit code used by the command-line front end: 2 for
    /// validation and configuration problems, 1 for everything that went
    /// wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            DcaError::Argument(_)
            | DcaError::Schema { .. }
            | DcaError::Config(_)
            | DcaError::IncompatibleCheckpoint(_)
            | DcaError::UnsupportedAnalysis(_)
            | DcaError::Json(_) => 2,
            _ => 1,
        }
    }
}
