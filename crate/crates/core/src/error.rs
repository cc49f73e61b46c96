use thiserror::Error;

use crate::backends::BackendError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("value {value} out of range for {what}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("invalid box {0:?}")]
    InvalidBox(crate::model::BBox),
    #[error("image {width}x{height} too small: {reason}")]
    TooSmall {
        width: usize,
        height: usize,
        reason: &'static str,
    },
    #[error("invalid label: {0:?}")]
    InvalidLabel(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("label sets differ: {0}")]
    LabelMismatch(String),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("all {count} patches failed during {stage}: {last}")]
    AllPatchesFailed {
        stage: &'static str,
        count: usize,
        last: String,
    },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("wall-clock limit of {limit_secs} s exceeded after {elapsed_secs:.3} s")]
    Timeout { limit_secs: f64, elapsed_secs: f64 },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
