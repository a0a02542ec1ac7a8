use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report. Variant names double as the
/// stable error names printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("malformed record at {path}:{line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("empty response for id {0:?}")]
    EmptyResponse(String),
    #[error("no {matrix} feature row for id {id:?}")]
    MissingFeature { id: String, matrix: String },
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },
    #[error("non-finite feature value in {matrix} for id {id:?}")]
    NonFiniteFeature { id: String, matrix: String },
    #[error("{what} value {value} outside [{lo}, {hi}]")]
    ScoreOutOfRange {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("zero-norm embedding")]
    DegenerateEmbedding,
    #[error("template error: {0}")]
    TemplateError(String),
    #[error("unparseable score line {0:?}")]
    UnparseableScore(String),
    #[error("scoring failed for id {id:?} after {attempts} attempts: {last}")]
    ScoringFailed {
        id: String,
        attempts: usize,
        last: String,
    },
    #[error("missing {indicator} score for id {id:?}")]
    MissingScore { id: String, indicator: String },
    #[error("target rank {rank} outside [1, {max}]")]
    BadRank { rank: usize, max: usize },
    #[error("cannot form {k} clusters from {n} rows")]
    TooManyClusters { k: usize, n: usize },
    #[error("affinity kernel width is zero (all points identical)")]
    DegenerateAffinity,
    #[error("eval report for subset {0} has no benchmark scores")]
    EmptyReport(usize),
    #[error("no eval report for subset {0}")]
    MissingLabel(usize),
    #[error("eval report for unknown subset {0}")]
    UnknownSubset(usize),
    #[error("duplicate eval report for subset {0}")]
    DuplicateReport(usize),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("cannot load model: {0}")]
    ModelLoadError(String),
    #[error("alpha {alpha} exceeds dataset size {total}")]
    InfeasibleAlpha { alpha: usize, total: usize },
    #[error("quota {k} exceeds cluster size {len}")]
    QuotaExceedsCluster { k: usize, len: usize },
    #[error("{0}")]
    Internal(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// The variant name, e.g. `MissingScore`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DuplicateId(_) => "DuplicateId",
            Error::MalformedRecord { .. } => "MalformedRecord",
            Error::EmptyResponse(_) => "EmptyResponse",
            Error::MissingFeature { .. } => "MissingFeature",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteFeature { .. } => "NonFiniteFeature",
            Error::ScoreOutOfRange { .. } => "ScoreOutOfRange",
            Error::DegenerateEmbedding => "DegenerateEmbedding",
            Error::TemplateError(_) => "TemplateError",
            Error::UnparseableScore(_) => "UnparseableScore",
            Error::ScoringFailed { .. } => "ScoringFailed",
            Error::MissingScore { .. } => "MissingScore",
            Error::BadRank { .. } => "BadRank",
            Error::TooManyClusters { .. } => "TooManyClusters",
            Error::DegenerateAffinity => "DegenerateAffinity",
            Error::EmptyReport(_) => "EmptyReport",
            Error::MissingLabel(_) => "MissingLabel",
            Error::UnknownSubset(_) => "UnknownSubset",
            Error::DuplicateReport(_) => "DuplicateReport",
            Error::BadConfig(_) => "BadConfig",
            Error::DivergedTraining { .. } => "DivergedTraining",
            Error::ModelLoadError(_) => "ModelLoadError",
            Error::InfeasibleAlpha { .. } => "InfeasibleAlpha",
            Error::QuotaExceedsCluster { .. } => "QuotaExceedsCluster",
            Error::Internal(_) => "Internal",
            Error::Io { .. } => "Io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context: context.into(),
        }
    }
}
