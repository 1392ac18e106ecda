use thiserror::Error;

/// Where a zero-norm embedding was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroSource {
    Target,
    Backdoor(usize),
    Benign(usize),
    /// Index into a list of vector pairs.
    Pair(usize),
}

impl std::fmt::Display for ZeroSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ZeroSource::Target => write!(f, "target"),
            ZeroSource::Backdoor(i) => write!(f, "backdoor probe {i}"),
            ZeroSource::Benign(i) => write!(f, "benign probe {i}"),
            ZeroSource::Pair(i) => write!(f, "pair {i}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("insufficient vocabulary: {eligible} eligible words, {required} required")]
    InsufficientVocabulary { eligible: usize, required: usize },

    #[error("vocabulary of {vocab_size} words cannot host {num_classes} classes")]
    VocabTooSmall {
        vocab_size: usize,
        num_classes: usize,
    },

    #[error("target sample has no tokens")]
    DegenerateTargetSample,

    #[error("watermark combination has (near) zero norm")]
    DegenerateCombination,

    #[error("normal equations are singular; use a positive ridge lambda")]
    SingularSystem,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("zero-norm embedding ({0})")]
    ZeroEmbedding(ZeroSource),

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("fewer than two directions with nonzero variance")]
    DegenerateSpread,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Strips any stage labels and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
