use std::io;

/// Errors produced by the retrieval engine.
///
/// Variants line up with the failure classes the service exposes as HTTP
/// status codes and the CLI exposes as exit codes, so callers can map them
/// without inspecting messages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("corrupt store: {0}")]
    CorruptStore(String),

    #[error("no summary: {0}")]
    NoSummary(String),

    #[error("no valid temporal pair for video {0}")]
    NoPair(String),

    #[error("invalid submission: {0}")]
    InvalidSubmission(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptStore(msg.into())
    }

    /// Stable machine-readable code, used in service error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Conflict(_) => "conflict",
            Error::NotFound(_) => "not_found",
            Error::ProviderUnavailable(_) => "provider_unavailable",
            Error::CorruptStore(_) => "corrupt_store",
            Error::NoSummary(_) => "no_summary",
            Error::NoPair(_) => "no_pair",
            Error::InvalidSubmission(_) => "invalid_submission",
            Error::Io(_) => "io_error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
