use thiserror::Error;

pub type Result<T> = std::result::Result<T, HdmmError>;

#[derive(Debug, Error)]
pub enum HdmmError {
    #[error("invalid building block: {0}")]
    InvalidBlock(String),

    #[error("workload compile error: {0}")]
    Compile(String),

    #[error("materialization of {requested} entries exceeds the cap of {cap}")]
    SizeLimit { requested: u128, cap: u128 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("strategy does not support the workload: {0}")]
    Unsupported(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid gram matrix: {0}")]
    InvalidGram(String),

    #[error("{operator} failed: {message}")]
    Optimization { operator: String, message: String },

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("row {row}, attribute `{attribute}`: {message}")]
    Ingestion {
        row: usize,
        attribute: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HdmmError {
    pub(crate) fn optimization(operator: &str, message: impl Into<String>) -> Self {
        HdmmError::Optimization {
            operator: operator.to_string(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for HdmmError {
    fn from(e: serde_json::Error) -> Self {
        HdmmError::Parse(e.to_string())
    }
}

impl From<csv::Error> for HdmmError {
    fn from(e: csv::Error) -> Self {
        HdmmError::Parse(e.to_string())
    }
}
