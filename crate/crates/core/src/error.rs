use std::path::PathBuf;

use ncl_autograd::AutogradError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, NclError>;

#[derive(Debug, Error)]
pub enum NclError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    /// Configuration or schema violation.
    #[error("config: {0}")]
    Config(String),
    /// Malformed, missing or inconsistent data.
    #[error("data: {0}")]
    Data(String),
    /// Training diverged or produced non-finite values.
    #[error("numeric: {0}")]
    Numeric(String),
    /// A metric is undefined for the given input.
    #[error("metric: {0}")]
    Metric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl NclError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            NclError::Config(_) => 2,
            NclError::Numeric(_) => 4,
            NclError::Autograd(AutogradError::NonFinite(_)) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            NclError::Autograd(_) => "autograd",
            NclError::Config(_) => "config",
            NclError::Data(_) => "data",
            NclError::Numeric(_) => "numeric",
            NclError::Metric(_) => "metric",
            NclError::Io { .. } => "io",
            NclError::Json(_) => "json",
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> NclError {
    NclError::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> NclError {
    NclError::Data(msg.into())
}
