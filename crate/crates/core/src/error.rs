use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {index} in {path}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        index: usize,
        reason: String,
    },

    #[error("unknown label value {value:?} at record {index}")]
    UnknownLabel { index: usize, value: String },

    #[error("no records in {0}")]
    NoRecords(PathBuf),

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("dataset not found: {0}")]
    DatasetNotFound(String),

    #[error("invalid batch plan: {0}")]
    InvalidBatchPlan(String),

    #[error("degenerate projection: pre-normalization norm {0:e} below 1e-12")]
    DegenerateProjection(f64),

    #[error("no positive pairs in batch")]
    NoPositivePairs,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at step {step} (batch ids: {batch_ids:?})")]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },

    #[error("no code content")]
    NoCodeContent,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("preprocessing mismatch: model trained with strip_comments={trained}, requested {requested}")]
    PreprocessingMismatch { trained: bool, requested: bool },

    #[error("duplicate ablation cell: {0}")]
    DuplicateAblationCell(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::NoRecords(_) => "no_records",
            Error::DuplicateId(_) => "duplicate_id",
            Error::DatasetNotFound(_) => "dataset_not_found",
            Error::InvalidBatchPlan(_) => "invalid_batch_plan",
            Error::DegenerateProjection(_) => "degenerate_projection",
            Error::NoPositivePairs => "no_positive_pairs",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NoCodeContent => "no_code_content",
            Error::Checkpoint(_) => "checkpoint",
            Error::PreprocessingMismatch { .. } => "preprocessing_mismatch",
            Error::DuplicateAblationCell(_) => "duplicate_ablation_cell",
            Error::Tokenizer(_) => "tokenizer",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Config(_) => "config",
            Error::Plot(_) => "plot",
        }
    }
}
