use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutogradError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutogradError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: row {row} has zero norm")]
    ZeroNorm { op: &'static str, row: usize },
    #[error("{op}: input outside the domain at index {index} (value {value})")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("expected a single-element tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
}
