use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed CIFAR batch: {len} bytes is not a positive multiple of {record} bytes")]
    MalformedFile { len: usize, record: usize },

    #[error("corrupt record {index}: label byte {label} is out of range 0..=9")]
    CorruptRecord { index: usize, label: u8 },

    #[error("degenerate normalization statistics: std = {0}")]
    DegenerateStats(f64),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("unknown category `{name}` (valid: {})", valid.join(", "))]
    UnknownCategory { name: String, valid: Vec<String> },

    #[error("unknown task `{name}` (gate bank has: {})", tasks.join(", "))]
    UnknownTask { name: String, tasks: Vec<String> },

    #[error("backward requires a trace from a train-mode forward pass")]
    MissingTrace,

    #[error("label {label} in row {row} is out of range for {classes} classes")]
    Label {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("missing gates for category `{0}`")]
    MissingGates(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("not a checkpoint file (bad magic)")]
    NotACheckpoint,

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: String,
    },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("dataset check failed: {}", problems.join("; "))]
    DataCheck { problems: Vec<String> },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
