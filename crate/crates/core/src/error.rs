use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("transport error talking to {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: usize,
        message: String,
    },

    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("fingerprint mismatch for {artifact}: expected {expected}, found {found}")]
    FingerprintMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage failed for claim {claim_id}{}: {source}", doc_suffix(*.doc_id))]
    Stage {
        stage: &'static str,
        claim_id: u64,
        doc_id: Option<u64>,
        #[source]
        source: Box<Error>,
    },
}

fn doc_suffix(doc_id: Option<u64>) -> String {
    match doc_id {
        Some(d) => format!(" (doc {d})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: &'static str, claim_id: u64, doc_id: Option<u64>, source: Error) -> Self {
        Error::Stage {
            stage,
            claim_id,
            doc_id,
            source: Box::new(source),
        }
    }

    /// Short machine-readable category, used by the CLI's error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Integrity(_) => "integrity",
            Error::Contract(_) => "contract",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Training(_) => "training",
            Error::Transport { .. } => "transport",
            Error::Protocol { .. } => "protocol",
            Error::ModelFormat(_) => "model_format",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::Config(_) => "config",
            Error::Stage { .. } => "stage",
        }
    }
}
