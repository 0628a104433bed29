use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClubError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("negative {what}: {value}")]
    Negative { what: &'static str, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ClubError {
    /// True for failures caused by bad user input rather than the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(self, ClubError::Config(_) | ClubError::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, ClubError>;

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index < size {
        Ok(())
    } else {
        Err(ClubError::IndexOutOfRange { what, index, size })
    }
}
