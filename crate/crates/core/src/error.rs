//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A sequence does not fit the encoder or decoder context window.
    #[error("context overflow: {what} needs {needed} positions but the limit is {limit}")]
    ContextOverflow {
        what: String,
        needed: usize,
        limit: usize,
    },

    /// A non-finite value reached an operation running in strict mode, or a
    /// training loss diverged.
    #[error("non-finite value in {context}{}", diagnostics.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    NonFinite {
        context: String,
        diagnostics: Option<String>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown language tag '{0}'")]
    UnknownLanguage(String),

    #[error("language tag '{0}' is already registered")]
    DuplicateLanguage(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Corrupt or foreign file content: bad magic, version, checksum, truncation.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("checksum mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        path: String,
        stored: u32,
        computed: u32,
    },

    /// A registry or audit references a checkpoint built from a different config.
    #[error("config digest mismatch: {detail}")]
    DigestMismatch { detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
