use serde::Serialize;
use thiserror::Error;
use vfmchat_core::engine::TraceRecord;
use vfmchat_core::workspace::WorkspaceError;
use vfmchat_core::backend::TranscriptError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("session {0} is busy with another message")]
    Busy(String),
    #[error("upload of {size} bytes exceeds the limit of {limit} bytes")]
    TooLarge { size: u64, limit: u64 },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    /// The completion backend failed mid-round; `trace` holds the steps taken.
    #[error("completion backend failed: {message}")]
    Backend {
        message: String,
        trace: Vec<TraceRecord>,
    },
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            Self::BadRequest(_) => 400,
            Self::NotFound(_) => 404,
            Self::Busy(_) => 409,
            Self::TooLarge { .. } => 413,
            Self::UnsupportedFormat(_) => 415,
            Self::Backend { .. } => 502,
            Self::Workspace(_) | Self::Transcript(_) | Self::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::BadRequest(_) => "bad-request",
            Self::NotFound(_) => "not-found",
            Self::Busy(_) => "busy",
            Self::TooLarge { .. } => "too-large",
            Self::UnsupportedFormat(_) => "unsupported-format",
            Self::Backend { .. } => "backend",
            Self::Workspace(_) | Self::Transcript(_) | Self::Internal(_) => "internal",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code(),
            message: self.to_string(),
            trace: match self {
                Self::Backend { trace, .. } => trace.clone(),
                _ => Vec::new(),
            },
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRecord>,
}
