use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or batch shape disagreement.
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Dataset loading or validation failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Training aborted; carries the failing optimizer step.
    #[error("training aborted at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// Metric preconditions not met (degenerate codes or factors).
    #[error("metric error: {0}")]
    Metric(String),

    /// Checkpoint container could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Refusal to overwrite an existing output directory.
    #[error("output directory {0} already exists (pass --force to overwrite)")]
    OutputExists(PathBuf),

    /// Plot rendering failure.
    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            found: found.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
