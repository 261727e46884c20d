//! JSON-lines transcripts of a session: the configuration, every user
//! event, and every completion together with a fingerprint of its prompt.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{BackendError, CompletionBackend, CompletionRequest};

pub const TRANSCRIPT_VERSION: u32 = 1;
/// Characters of prompt tail stored with each completion.
pub const SUFFIX_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    pub v: u32,
    /// Lowercase hex sha256 of the full prompt.
    pub digest: String,
    /// Prompt length in bytes.
    pub prompt_len: usize,
    /// Last [`SUFFIX_CHARS`] characters of the prompt.
    pub suffix: String,
    pub response: String,
}

impl TranscriptEntry {
    pub fn new(prompt: &str, response: impl Into<String>) -> Self {
        Self {
            v: TRANSCRIPT_VERSION,
            digest: prompt_digest(prompt),
            prompt_len: prompt.len(),
            suffix: prompt_suffix(prompt).to_string(),
            response: response.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TranscriptRecord {
    /// Session settings as `key = value` pairs.
    Session { config: BTreeMap<String, String> },
    /// An uploaded file: the user's file name, the workspace path it was
    /// stored under, and the stored bytes in base64.
    Upload {
        name: String,
        path: String,
        data: String,
    },
    Message { text: String },
    Completion(TranscriptEntry),
    /// Outcome of one round, checked on replay. `digest` is the sha256 of
    /// every transcript byte before this line; [`TranscriptWriter`] fills it
    /// in, so any edit to earlier lines is caught on load.
    Round {
        final_answer: String,
        termination: String,
        digest: String,
    },
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("transcript line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("transcript line {line}: unsupported version {found}")]
    Version { line: usize, found: u32 },
    #[error("transcript line {line}: digest does not match the preceding lines")]
    Integrity { line: usize },
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn prompt_suffix(prompt: &str) -> &str {
    match prompt.char_indices().rev().nth(SUFFIX_CHARS - 1) {
        Some((at, _)) => &prompt[at..],
        None => prompt,
    }
}

/// Parse a transcript, checking each round record's digest against the
/// bytes before it.
pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptRecord>, TranscriptError> {
    let mut out = Vec::new();
    let mut hasher = Sha256::new();
    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            hasher.update(raw.as_bytes());
            continue;
        }
        let record: TranscriptRecord =
            serde_json::from_str(line).map_err(|e| TranscriptError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        match &record {
            TranscriptRecord::Completion(entry) if entry.v != TRANSCRIPT_VERSION => {
                return Err(TranscriptError::Version {
                    line: idx + 1,
                    found: entry.v,
                });
            }
            TranscriptRecord::Round { digest, .. } if *digest != hex::encode(hasher.clone().finalize()) => {
                return Err(TranscriptError::Integrity { line: idx + 1 });
            }
            _ => {}
        }
        hasher.update(raw.as_bytes());
        out.push(record);
    }
    Ok(out)
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, TranscriptError> {
    let text = std::fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_transcript(&text)
}

/// Appends records to a transcript file, flushing after each one so a
/// crash loses at most the record being written.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: String,
    file: Mutex<(File, Sha256)>,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> Result<Self, TranscriptError> {
        Self::open_with(
            path,
            OpenOptions::new().read(true).write(true).create(true).truncate(true),
        )
    }

    pub fn append(path: &Path) -> Result<Self, TranscriptError> {
        Self::open_with(path, OpenOptions::new().read(true).create(true).append(true))
    }

    fn open_with(path: &Path, options: &OpenOptions) -> Result<Self, TranscriptError> {
        let io_err = |source| TranscriptError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = options.open(path).map_err(io_err)?;
        let mut hasher = Sha256::new();
        // Appending continues the digest chain over what is already there.
        let mut existing = Vec::new();
        file.seek(SeekFrom::Start(0)).map_err(io_err)?;
        file.read_to_end(&mut existing).map_err(io_err)?;
        hasher.update(&existing);
        Ok(Self {
            path: path.display().to_string(),
            file: Mutex::new((file, hasher)),
        })
    }

    /// Append `record`. A round record's digest is replaced by the digest
    /// of the file so far.
    pub fn write(&self, record: &TranscriptRecord) -> Result<(), TranscriptError> {
        let mut guard = self.file.lock().unwrap_or_else(|e| e.into_inner());
        let (file, hasher) = &mut *guard;
        let mut line = match record {
            TranscriptRecord::Round {
                final_answer,
                termination,
                ..
            } => serde_json::to_string(&TranscriptRecord::Round {
                final_answer: final_answer.clone(),
                termination: termination.clone(),
                digest: hex::encode(hasher.clone().finalize()),
            }),
            other => serde_json::to_string(other),
        }
        .expect("transcript record serializes");
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| TranscriptError::Io {
                path: self.path.clone(),
                source,
            })?;
        hasher.update(line.as_bytes());
        Ok(())
    }
}

/// Forwards to `inner` and records each completion.
pub struct RecordingBackend {
    inner: Box<dyn CompletionBackend>,
    writer: Arc<TranscriptWriter>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn CompletionBackend>, writer: Arc<TranscriptWriter>) -> Self {
        Self { inner, writer }
    }
}

impl CompletionBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(request)?;
        let record = TranscriptRecord::Completion(TranscriptEntry::new(&request.prompt, &response));
        self.writer
            .write(&record)
            .map_err(|e| BackendError::Record(e.to_string()))?;
        Ok(response)
    }
}
