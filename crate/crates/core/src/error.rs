use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants map one-to-one onto the error names used across the pipeline
/// so callers can match on them (the CLI maps them onto exit codes).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("masking would remove every modality")]
    AllMissing,
    #[error("missing rate {mr} outside [0, {max}]")]
    RateOutOfRange { mr: f64, max: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("plan violates the triplet schema: {0}")]
    SchemaViolation(String),
    #[error("zero-norm vector in cosine computation")]
    ZeroVector,
    #[error("no schema-valid plan among {0} candidates")]
    NoValidPlan(usize),
    #[error("knowledge base would be empty (no fully observed samples)")]
    EmptyKb,
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("top-k with k={k} exceeds {n} entries")]
    KTooLarge { k: usize, n: usize },
    #[error("diffusion step {t} outside [1, {max}]")]
    BadStep { t: usize, max: usize },
    #[error("cumulative alpha {0} too small for a stable estimate")]
    DegenerateAlpha(f64),
    #[error("path cost needs at least two checkpoints, got {0}")]
    TooShort(usize),
    #[error("trajectory record is missing `{0}`")]
    IncompleteRecord(&'static str),
    #[error("non-finite loss in stage `{stage}` at epoch {epoch}: {detail}")]
    NonFiniteLoss {
        stage: String,
        epoch: usize,
        detail: String,
    },
    #[error("unknown ablation `{0}`")]
    UnknownAblation(String),
    #[error("empty input")]
    EmptyInput,
    #[error("every sample was excluded (all true scores are zero)")]
    AllExcluded,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("missing tensor `{0}` in checkpoint")]
    MissingTensor(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("property check failed: {0}")]
    PropertyFailed(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::AllMissing
                | Error::RateOutOfRange { .. }
                | Error::UnknownAblation(_)
                | Error::KTooLarge { .. }
                | Error::SchemaViolation(_)
                | Error::Json(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
