use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("invalid record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("shard member {0:?} has no matching image/caption partner")]
    Pairing(String),

    #[error("sample {0:?} has no text-box annotation")]
    MissingAnnotation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("category coverage error: {0}")]
    Coverage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("image error for {id:?}: {message}")]
    Image { id: String, message: String },

    #[error("provider error{}: {message}", id.as_deref().map(|i| format!(" for {i:?}")).unwrap_or_default())]
    Provider { id: Option<String>, message: String },

    #[error("{} sample(s) failed: {}", .0.len(), summarize(.0))]
    Aggregate(Vec<(String, String)>),
}

fn summarize(failures: &[(String, String)]) -> String {
    const SHOWN: usize = 5;
    let mut parts: Vec<String> = failures
        .iter()
        .take(SHOWN)
        .map(|(id, msg)| format!("{id}: {msg}"))
        .collect();
    if failures.len() > SHOWN {
        parts.push(format!("... and {} more", failures.len() - SHOWN));
    }
    parts.join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn provider(message: impl Into<String>) -> Self {
        Error::Provider {
            id: None,
            message: message.into(),
        }
    }

    /// Attaches a sample id to provider errors that do not carry one yet.
    pub(crate) fn for_sample(self, sample: &str) -> Self {
        match self {
            Error::Provider { id: None, message } => Error::Provider {
                id: Some(sample.to_string()),
                message,
            },
            other => other,
        }
    }

    /// Process exit code for command-line front ends: 2 validation, 3 per-sample
    /// aggregate failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 4,
            Error::Aggregate(_) => 3,
            _ => 2,
        }
    }
}
