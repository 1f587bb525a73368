use thiserror::Error;

/// Error type shared across the crate.
///
/// Variants are grouped by how the caller should react: `Usage` means the
/// API was called incorrectly, `Domain` means a value fell outside a
/// mathematical precondition, `Config`/`Parse` are data-preparation
/// problems, and `Train`/`Inference` are runtime failures of the learning
/// stages.
#[derive(Debug, Error)]
pub enum LpsError {
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training error{}: {msg}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Train { epoch: Option<usize>, msg: String },

    #[error("inference error: {0}")]
    Inference(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LpsError {
    pub fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        LpsError::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub fn train(msg: impl Into<String>) -> Self {
        LpsError::Train {
            epoch: None,
            msg: msg.into(),
        }
    }

    pub fn train_at(epoch: usize, msg: impl Into<String>) -> Self {
        LpsError::Train {
            epoch: Some(epoch),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LpsError>;
