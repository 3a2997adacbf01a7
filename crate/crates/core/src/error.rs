use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): width and height must be positive and finite")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("query is unparseable: no nominal head in {0:?}")]
    NoNominal(String),

    #[error("span {start}..{end} lies outside the source text (length {len})")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("oracle found {count} satisfiers for query {query:?}")]
    Oracle { query: String, count: usize },

    #[error("generator cannot satisfy configuration: {0}")]
    Unsatisfiable(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("strategy U requires a ground-truth box")]
    MissingGroundTruth,

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
