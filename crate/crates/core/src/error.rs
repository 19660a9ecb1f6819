use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    // dataset
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{col}`: {value:?}")]
    NonNumericCell { row: usize, col: String, value: String },
    #[error("duplicate row for enterprise `{0}`, year {1}")]
    DuplicateEnterpriseYear(String, i32),
    #[error("indicator `{0}` has zero variance on the fit set")]
    ZeroVariance(String),
    #[error("no enterprises left after the size filter")]
    EmptyAfterFilter,
    #[error("rating level {0} outside 1..=10")]
    LevelOutOfRange(i64),
    #[error("class {0} has no labeled sample in the training split")]
    ClassMissingInTrain(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // graph mapping
    #[error("enterprise `{id}` has fewer than 2 usable rows up to {end_year}")]
    InsufficientHistory { id: String, end_year: i32 },
    #[error("unknown export format `{0}`")]
    UnknownFormat(String),
    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    // numerics
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("segment id {id} out of range for {n_segments} segments")]
    BadSegmentId { id: usize, n_segments: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("pooling projection of layer {0} has vanished")]
    ZeroProjection(usize),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),

    // checkpoints and metrics
    #[error("checkpoint format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("class {0} has no positives or no negatives")]
    DegenerateClass(usize),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    /// True for failures of the numerics (divergence, NaN/Inf, vanished
    /// parameters) as opposed to bad input data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::ZeroProjection(_)
                | Error::NonFiniteGradient(_)
                | Error::Diverged(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
