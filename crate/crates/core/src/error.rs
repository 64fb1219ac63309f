use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid type index {0}")]
    InvalidType(usize),

    #[error("invalid mark index {0}")]
    InvalidMark(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("thinning bound violated at t={time}: acceptance ratio {ratio} > 1")]
    BoundViolated { time: f64, ratio: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("sample contains no events")]
    EmptySample,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("{failed} of {total} replications failed (more than 20%)")]
    StudyFailed { failed: usize, total: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
