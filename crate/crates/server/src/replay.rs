//! Re-run a recorded session transcript against its own completions and
//! check that every round comes out the same and the re-recorded transcript
//! is byte-identical.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use base64::Engine as _;
use vfmchat_core::backend::{parse_transcript, ScriptedBackend, TranscriptError, TranscriptRecord};
use vfmchat_core::CompletionBackend;

use crate::config::{BackendKind, SessionConfig};
use crate::error::ServiceError;
use crate::session::{BackendFactory, Session, Shared, Upload, TRANSCRIPT_FILE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub rounds: usize,
    pub completions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Match(ReplayReport),
    Mismatch(String),
}

fn mismatch(round: usize, detail: impl std::fmt::Display) -> ReplayOutcome {
    ReplayOutcome::Mismatch(format!("round {round}: {detail}"))
}

/// Replay the transcript `text` in a fresh recording session under
/// `scratch`. Divergence, including a failed digest check, is reported as
/// [`ReplayOutcome::Mismatch`]; errors are reserved for transcripts that
/// cannot be read as a recorded session at all.
pub fn replay(shared: Arc<Shared>, text: &str, scratch: &Path) -> Result<ReplayOutcome, ServiceError> {
    let records = match parse_transcript(text) {
        Ok(r) => r,
        Err(e @ TranscriptError::Integrity { .. }) => return Ok(ReplayOutcome::Mismatch(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let Some(TranscriptRecord::Session { config }) = records.first() else {
        return Err(ServiceError::BadRequest(
            "transcript does not start with a session record".into(),
        ));
    };
    let mut cfg = SessionConfig::default();
    cfg.apply(config.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    if cfg.backend_kind != BackendKind::Recording {
        return Err(ServiceError::BadRequest("transcript was not recorded by a session".into()));
    }

    let scripted = Arc::new(ScriptedBackend::from_records(records.to_vec()));
    let for_factory = scripted.clone();
    let factory: BackendFactory =
        Arc::new(move |_: &SessionConfig| Ok(Box::new(for_factory.clone()) as Box<dyn CompletionBackend>));
    // Same config as the original, so the session re-records itself; only
    // the inner backend differs.
    let mut session = Session::create(shared, scratch, "replay", cfg, &factory)?;

    let mut pending: Option<(Upload, String)> = None;
    let mut last = None;
    let mut rounds = 0;
    for record in &records[1..] {
        match record {
            TranscriptRecord::Session { .. } => {
                return Err(ServiceError::BadRequest("transcript has a second session record".into()))
            }
            TranscriptRecord::Upload { name, path, data } => {
                if let Some((u, want)) = pending.take() {
                    let got = session.upload(&u)?;
                    if got.to_string() != want {
                        return Ok(mismatch(rounds + 1, format!("upload stored as {got}, recorded {want}")));
                    }
                }
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(data)
                    .map_err(|e| ServiceError::BadRequest(format!("upload data is not base64: {e}")))?;
                pending = Some((
                    Upload {
                        name: name.clone(),
                        bytes,
                    },
                    path.clone(),
                ));
            }
            TranscriptRecord::Message { text } => {
                let round = rounds + 1;
                let upload = pending.take();
                let resp = match session.post_message(text, upload.as_ref().map(|(u, _)| u)) {
                    Ok(r) => r,
                    Err(ServiceError::Backend { message, .. }) => return Ok(mismatch(round, message)),
                    Err(e) => return Err(e),
                };
                if let Some((_, want)) = &upload {
                    let got = resp.files.first().map(|f| f.path.as_str()).unwrap_or("");
                    if got != want {
                        return Ok(mismatch(round, format!("upload stored as {got}, recorded {want}")));
                    }
                }
                last = Some(resp);
            }
            TranscriptRecord::Completion(_) => {}
            TranscriptRecord::Round {
                final_answer,
                termination,
                ..
            } => {
                rounds += 1;
                let Some(resp) = last.take() else {
                    return Ok(mismatch(rounds, "round record without a message"));
                };
                if &resp.final_answer != final_answer {
                    return Ok(mismatch(
                        rounds,
                        format!("final answer {:?}, recorded {final_answer:?}", resp.final_answer),
                    ));
                }
                if resp.termination.as_str() != termination {
                    return Ok(mismatch(
                        rounds,
                        format!("termination {}, recorded {termination}", resp.termination.as_str()),
                    ));
                }
            }
        }
    }
    if let Some((u, want)) = pending.take() {
        let got = session.upload(&u)?;
        if got.to_string() != want {
            return Ok(mismatch(rounds + 1, format!("upload stored as {got}, recorded {want}")));
        }
    }
    if last.is_some() {
        return Ok(mismatch(rounds + 1, "message without a round record"));
    }
    if scripted.remaining() != 0 {
        return Ok(mismatch(
            rounds,
            format!("{} recorded completions were never requested", scripted.remaining()),
        ));
    }
    drop(session);
    let again = fs::read(scratch.join(TRANSCRIPT_FILE))?;
    if again != text.as_bytes() {
        let at = again
            .iter()
            .zip(text.as_bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(again.len().min(text.len()));
        return Ok(ReplayOutcome::Mismatch(format!(
            "re-recorded transcript differs from the original at byte {at}"
        )));
    }
    Ok(ReplayOutcome::Match(ReplayReport {
        rounds,
        completions: scripted.served(),
    }))
}
