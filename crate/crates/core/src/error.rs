use crate::dataset::BundleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Bundle(#[from] BundleError),

    #[error("vector norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot fit {clusters} clusters to {points} distinct points")]
    TooFewPoints { points: usize, clusters: usize },

    #[error("no quasi-orthogonal prototype set found after {tries} tries (dimension too small?)")]
    RejectionExceeded { tries: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("attribute document for {owner} is empty")]
    EmptyDocument { owner: String },

    #[error("empty attribute profile ({context})")]
    EmptyProfile { context: String },

    #[error("pseudo-label percentage {0} is outside (0, 100]")]
    InvalidPercent(f64),

    #[error("ground truth is not available for this bundle")]
    GroundTruthUnavailable,

    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("no ground truth for video `{video_id}`")]
    MissingGroundTruth { video_id: String },

    #[error("nothing to evaluate")]
    EmptyEvaluation,

    #[error("invalid training batch: {0}")]
    InvalidBatch(String),

    #[error("stage `{stage}` failed in epoch {epoch}: {source}")]
    Stage {
        stage: &'static str,
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by bad input (bundle contents, configuration,
    /// arguments) rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Bundle(e) => !matches!(e, BundleError::Io { .. }),
            Error::InvalidConfig(_)
            | Error::InvalidPercent(_)
            | Error::DimensionMismatch { .. }
            | Error::TooFewPoints { .. }
            | Error::GroundTruthUnavailable
            | Error::MissingGroundTruth { .. }
            | Error::Json { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
