use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate triple ({head}, {relation}, {tail})")]
    DuplicateTriple {
        line: usize,
        head: String,
        relation: String,
        tail: String,
    },

    #[error("unknown {kind} `{label}`")]
    UnknownSymbol { kind: &'static str, label: String },

    #[error("{kind} handle {index} out of range (size {size})")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("singular system: normal matrix is not positive definite")]
    Singular,

    #[error("empty neighborhood")]
    EmptyNeighborhood,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("out-of-sample group `{entity}` has {size} triple(s), need at least 2")]
    InvalidGroup { entity: String, size: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("nothing to evaluate")]
    EmptyEvaluation,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
