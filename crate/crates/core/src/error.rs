use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by tensor operations, models and metrics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("selective scan: step size must be positive, got {value} at row {row}, channel {channel}")]
    NonPositiveDelta { row: usize, channel: usize, value: f64 },
    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("weights do not match the model: {}", .0.join(", "))]
    WeightMismatch(Vec<String>),
}

pub type Result<T> = core::result::Result<T, Error>;
