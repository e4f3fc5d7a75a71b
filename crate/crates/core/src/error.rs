use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt NIfTI header: {0}")]
    CorruptHeader(String),

    #[error("unsupported dimensionality: {0}")]
    UnsupportedDimensionality(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("non-invertible affine")]
    SingularAffine,

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("degenerate intensity distribution")]
    DegenerateIntensity,

    #[error("interpolation mode {0} is not allowed on label data")]
    InterpolationOnLabels(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing GMM parameters for class {0}")]
    MissingClassParams(u16),

    #[error("effect size undefined: {0}")]
    EffectSize(String),

    #[error("degenerate parcellation for EF percentile: {0} classes present")]
    DegenerateParcellation(usize),

    #[error("scan acceptance retries exhausted after {retries} attempts")]
    AcceptanceExhausted { retries: usize },

    #[error("at {at}: {source}")]
    Job {
        at: JobId,
        #[source]
        source: Box<Error>,
    },

    #[error("no negative voxels")]
    NoNegatives,

    #[error("distance to empty surface undefined")]
    EmptySurface,

    #[error("empty sample")]
    EmptySample,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("predictor output shape mismatch: expected {expected} values, got {got}")]
    PredictorShape { expected: usize, got: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coordinates of a pipeline work unit; `p` is absent for per-mask stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobId {
    pub n: usize,
    pub m: usize,
    pub p: Option<usize>,
}

impl std::fmt::Display for JobId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.p {
            Some(p) => write!(f, "(n={}, m={}, p={})", self.n, self.m, p),
            None => write!(f, "(n={}, m={}, p=*)", self.n, self.m),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at(self, at: JobId) -> Self {
        Error::Job {
            at,
            source: Box::new(self),
        }
    }
}
