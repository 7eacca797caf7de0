use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("label conflict at t={timestamp}: resolved records from annotators {annotators:?}")]
    Conflict {
        timestamp: u64,
        annotators: Vec<String>,
    },
    #[error("unresolved conflict at t={0}: manual policy requires an override record")]
    Unresolved(u64),
    #[error("vocabulary error: class id {0} is outside the detection vocabulary")]
    Vocabulary(usize),
    #[error("extraction failed for {reference}: {message}")]
    Extraction { reference: String, message: String },
    #[error("shape error in {stage}: expected {expected}, got {actual}")]
    Shape {
        stage: &'static str,
        expected: String,
        actual: String,
    },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable short name of the variant, for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Integrity(_) => "integrity",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Conflict { .. } => "conflict",
            Error::Unresolved(_) => "unresolved",
            Error::Vocabulary(_) => "vocabulary",
            Error::Extraction { .. } => "extraction",
            Error::Shape { .. } => "shape",
            Error::Divergence { .. } => "divergence",
            Error::Protocol(_) => "protocol",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(stage: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            stage,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
