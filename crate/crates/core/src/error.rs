//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by tensors, networks, environments, losses and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss evaluated to a non-finite value ({0})")]
    NonFiniteLoss(f64),

    #[error("epsilon must be nonnegative and finite, got {0}")]
    NegativeEpsilon(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("action index {index} out of range for {count} actions")]
    ActionOutOfRange { index: usize, count: usize },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("snapshot belongs to a different environment ({0})")]
    ForeignSnapshot(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing metrics: {0}")]
    MissingMetrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
