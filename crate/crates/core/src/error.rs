//! Error types shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapcaError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv parse error at {path}: {reason}")]
    CsvFormat { path: String, reason: String },

    #[error("row {row} has {found} intensity cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("non-numeric cell at row {row}, column {column}: {cell:?}")]
    NonNumericCell {
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("axis is not strictly increasing at position {position}")]
    NonMonotoneAxis { position: usize },

    #[error("header does not start with sample_id,group_id,label")]
    UnknownLabelColumn,

    #[error("axis must have at least 2 points, got {0}")]
    AxisTooShort(usize),

    #[error("dataset needs at least 2 classes, found {0}")]
    SingleClass(usize),

    #[error("group column is present for some rows but empty for others (first empty at row {row})")]
    InconsistentGroups { row: usize },

    #[error("dataset has {labels} labels but {rows} rows")]
    LengthMismatch { labels: usize, rows: usize },

    #[error("group-level split requested but the dataset has no group column")]
    MissingGroups,

    #[error("class {class} has {count} samples; stratified splitting needs at least 2")]
    ClassTooSmall { class: usize, count: usize },

    #[error("k={k} exceeds the number of distinct groups ({groups})")]
    TooFewGroups { k: usize, groups: usize },

    #[error("k={k} exceeds the smallest class count ({count})")]
    TooFewPerClass { k: usize, count: usize },

    #[error("split would leave an empty partition (test_fraction={fraction})")]
    DegenerateSplit { fraction: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("crop range [{lo}, {hi}] does not intersect the axis")]
    EmptyCropRange { lo: f64, hi: f64 },

    #[error("spectrum has no positive maximum; cannot max-normalize")]
    AllZeroSpectrum,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training data contains a single class")]
    SingleClassTraining,

    #[error("tree contains a zero-cover node at index {node}")]
    ZeroCoverNode { node: usize },

    #[error("exhaustive coalition enumeration refused for K={k} (limit {limit})")]
    CoalitionGuard { k: usize, limit: usize },

    #[error("degenerate coalition regression: {0}")]
    DegenerateRegression(String),

    #[error("empty background set")]
    EmptyBackground,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ShapcaError>;
