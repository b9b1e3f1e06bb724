use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),
    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),
    #[error("search space has {size} architectures, above the enumeration cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u64 },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("architecture not found in accuracy table: {0}")]
    UnknownArchitecture(String),
    #[error("accuracy {value} out of [0, 1] at row {row}")]
    OutOfRangeAccuracy { row: usize, value: f64 },
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("duplicate genotype at row {row}")]
    DuplicateGenotype { row: usize },
    #[error("non-positive latency {value} at row {row}")]
    NonpositiveLatency { row: usize, value: f64 },
    #[error("parents belong to different search spaces")]
    SpaceMismatch,
    #[error("no individual satisfies the latency constraint {0} ms")]
    InfeasibleConstraint(f64),
    #[error("predicted latencies cannot be used to remove non-Pareto architectures")]
    PredictedLatencyRejected,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle has no measurement for {0}")]
    OracleCoverage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
