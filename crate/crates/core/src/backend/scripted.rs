use std::path::Path;
use std::sync::Mutex;

use super::transcript::{prompt_digest, prompt_suffix, read_transcript};
use super::{
    truncate_at_stop, BackendError, CompletionBackend, CompletionRequest, TranscriptEntry,
    TranscriptError, TranscriptRecord,
};

#[derive(Debug, Clone)]
struct Scripted {
    expect: Option<TranscriptEntry>,
    response: String,
}

/// Serves canned completions in order. Entries loaded from a transcript
/// also check that each prompt is byte-identical to the recorded one.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<Scripted>,
    cursor: Mutex<usize>,
}

/// The completion entries of a transcript file, in order.
pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, TranscriptError> {
    Ok(completions(read_transcript(path)?))
}

fn completions(records: Vec<TranscriptRecord>) -> Vec<TranscriptEntry> {
    records
        .into_iter()
        .filter_map(|r| match r {
            TranscriptRecord::Completion(e) => Some(e),
            _ => None,
        })
        .collect()
}

impl ScriptedBackend {
    /// Responses served without checking the prompt.
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::build(responses.into_iter().map(|r| Scripted {
            expect: None,
            response: r.into(),
        }))
    }

    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Self {
        Self::build(entries.into_iter().map(|e| Scripted {
            response: e.response.clone(),
            expect: Some(e),
        }))
    }

    pub fn from_records(records: Vec<TranscriptRecord>) -> Self {
        Self::from_entries(completions(records))
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        Ok(Self::from_entries(load_transcript(path)?))
    }

    fn build(entries: impl Iterator<Item = Scripted>) -> Self {
        Self {
            entries: entries.collect(),
            cursor: Mutex::new(0),
        }
    }

    pub fn served(&self) -> usize {
        *self.cursor.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.served()
    }
}

/// Locate where `actual` departs from a prompt of `expected_len` bytes
/// ending in `tail`. Exact only when the difference lies inside the tail.
fn divergence(expected_len: usize, tail: &str, actual: &str) -> (Option<usize>, usize) {
    let window_start = expected_len.saturating_sub(tail.len());
    let a = actual.as_bytes();
    for (i, b) in tail.bytes().enumerate() {
        if a.get(window_start + i) != Some(&b) {
            return (Some(window_start + i), window_start);
        }
    }
    if a.len() != expected_len {
        return (Some(expected_len.min(a.len())), window_start);
    }
    (None, window_start)
}

fn verify(entry: usize, expect: &TranscriptEntry, prompt: &str) -> Result<(), BackendError> {
    if prompt_digest(prompt) == expect.digest {
        if prompt.len() != expect.prompt_len || prompt_suffix(prompt) != expect.suffix {
            return Err(BackendError::CorruptEntry {
                entry,
                reason: "digest matches but length or tail does not".into(),
            });
        }
        return Ok(());
    }
    let (offset, window_start) = divergence(expect.prompt_len, &expect.suffix, prompt);
    Err(BackendError::PromptMismatch {
        entry,
        offset,
        window_start,
    })
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let Some(entry) = self.entries.get(*cursor) else {
            return Err(BackendError::Exhausted {
                served: self.entries.len(),
            });
        };
        if let Some(expect) = &entry.expect {
            verify(*cursor, expect, &request.prompt)?;
        }
        *cursor += 1;
        Ok(truncate_at_stop(&entry.response, &request.stop).to_string())
    }
}
