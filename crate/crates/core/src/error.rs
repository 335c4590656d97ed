use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss {value} at batch {batch}")]
    NonFinite { batch: usize, value: f64 },

    #[error("parse error in {path}: {kind}")]
    Parse { path: PathBuf, kind: ParseError },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Typed parser diagnostics shared by the image, CIFAR and LMFT readers.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("bad magic {found:?}, expected {expected}")]
    BadMagic { found: Vec<u8>, expected: &'static str },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval must be in 1..=65535, got {0}")]
    MaxVal(u32),
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("sample {value} exceeds maxval {maxval}")]
    SampleRange { value: u32, maxval: u32 },
    #[error("trailing bytes: {0} unexpected bytes after payload")]
    Trailing(usize),
    #[error("dimension overflow: {0}")]
    DimOverflow(String),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("unsupported rank {0}")]
    Rank(u8),
    #[error("length {len} is not a multiple of record size {record}")]
    RecordLength { len: usize, record: usize },
    #[error("label {label} out of range for {num_classes} classes in record {record}")]
    Label { record: usize, label: u8, num_classes: usize },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn shape_pair(op: &'static str, a: Shape, b: Shape) -> Self {
        Error::Shape { op, detail: format!("{a} vs {b}") }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, kind: ParseError) -> Self {
        Error::Parse { path: path.into(), kind }
    }
}
