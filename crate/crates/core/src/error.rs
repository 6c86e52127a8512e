use std::path::PathBuf;

/// Errors produced anywhere in the uncertainty pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("loss became NaN at epoch {epoch}")]
    NanLoss { epoch: usize },

    #[error("joint error support has {size} points, more than max_support = {max}")]
    SupportOverflow { size: usize, max: usize },

    #[error("observed value {value} for feature {feature} is not a key of its error table")]
    MissingObservation { feature: usize, value: f64 },

    #[error("observation {observed} of feature {feature} has zero probability under the test characteristics")]
    ImpossibleObservation { feature: usize, observed: u8 },

    #[error("bootstrap resample for member {member} contained a single class after {attempts} attempts")]
    SingleClassResample { member: usize, attempts: usize },

    #[error("coverage curve is undefined without misclassified queries")]
    NoMisclassifications,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NanLoss { .. } | Error::SupportOverflow { .. })
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}
