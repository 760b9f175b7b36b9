use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid layer sizes {0:?}: need at least two entries, all positive")]
    InvalidLayerSizes(Vec<usize>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("model shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("proximal term is active (mu = {0}) but no anchor model was supplied")]
    MissingAnchor(f64),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("rare class {0} has no samples to assign")]
    EmptyRareClass(usize),

    #[error("client id {id} out of range for {num_clients} clients")]
    ClientOutOfRange { id: usize, num_clients: usize },

    #[error("client {0} owns no samples")]
    EmptyClient(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("input is not a probability vector (sum = {0})")]
    NotNormalized(f64),

    #[error("class {0} has no validation samples")]
    EmptyClass(usize),

    #[error("cohort of {size} clients exceeds the exact-enumeration limit of {limit}")]
    CohortTooLarge { size: usize, limit: usize },

    #[error("cohort is empty")]
    EmptyCohort,

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("cannot draw {requested} clients: only {available} are eligible")]
    NotEnoughClients { requested: usize, available: usize },

    #[error("invalid value for {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding IDX files. Each malformation is reported distinctly.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated, need {expected} bytes but file has {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
