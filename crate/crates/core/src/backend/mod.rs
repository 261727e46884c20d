//! Completion backends: a remote text-completion service, a scripted
//! backend that replays a recorded transcript, and a recorder that wraps
//! any other backend.

mod remote;
mod scripted;
mod transcript;

use thiserror::Error;

pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use scripted::{load_transcript, ScriptedBackend};
pub use transcript::{
    parse_transcript, prompt_digest, prompt_suffix, read_transcript, RecordingBackend, TranscriptEntry, TranscriptError,
    TranscriptRecord, TranscriptWriter, SUFFIX_CHARS, TRANSCRIPT_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub stop: Vec<String>,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl CompletionRequest {
    pub fn new(
        prompt: impl Into<String>,
        stop: Vec<String>,
        max_output_tokens: u32,
        temperature: f32,
    ) -> Result<Self, BackendError> {
        let prompt = prompt.into();
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=1.0).contains(&temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {temperature} out of range"
            )));
        }
        Ok(Self {
            prompt,
            stop,
            max_output_tokens,
            temperature,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("completion service returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("transcript exhausted after {served} completions")]
    Exhausted { served: usize },
    #[error("{}", mismatch_message(*entry, *offset, *window_start))]
    PromptMismatch {
        entry: usize,
        /// First differing byte, when it falls inside the stored tail.
        offset: Option<usize>,
        window_start: usize,
    },
    #[error("transcript entry {entry} is inconsistent: {reason}")]
    CorruptEntry { entry: usize, reason: String },
    #[error("failed to record completion: {0}")]
    Record(String),
}

fn mismatch_message(entry: usize, offset: Option<usize>, window_start: usize) -> String {
    match offset {
        Some(at) => format!("prompt mismatch at transcript entry {entry}: first difference at byte {at}"),
        None => format!(
            "prompt mismatch at transcript entry {entry}: prompts differ before byte {window_start}"
        ),
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Cut `text` at the earliest stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stop: &[String]) -> &'a str {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}
