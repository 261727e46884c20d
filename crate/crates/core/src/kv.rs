//! Line-oriented key/value documents.
//!
//! `#` starts a comment line, blank lines separate documents, and each
//! remaining line is `key<sep>value` split at the first separator.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub type Document = Vec<Entry>;

pub fn parse_documents(text: &str, sep: char) -> Result<Vec<Document>, KvError> {
    let mut docs = Vec::new();
    let mut current = Document::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once(sep).ok_or_else(|| KvError {
            line,
            message: format!("expected `key{sep} value`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(KvError {
                line,
                message: "empty key".into(),
            });
        }
        current.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    if !current.is_empty() {
        docs.push(current);
    }
    Ok(docs)
}

/// Single-document form: blank lines are ignored rather than splitting.
pub fn parse_flat(text: &str, sep: char) -> Result<Document, KvError> {
    Ok(parse_documents(text, sep)?.into_iter().flatten().collect())
}

pub fn get<'a>(doc: &'a Document, key: &str) -> Option<&'a str> {
    doc.iter().find(|e| e.key == key).map(|e| e.value.as_str())
}
