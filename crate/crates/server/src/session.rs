//! Conversation sessions: one directory each, holding `session.conf`,
//! `state.json`, `history.jsonl`, the `image/` workspace, and optionally a
//! recorded `transcript.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use vfmchat_core::backend::{
    RecordingBackend, RemoteBackend, RemoteConfig, ScriptedBackend, TranscriptRecord, TranscriptWriter,
};
use vfmchat_core::engine::{Engine, Termination, TraceRecord};
use vfmchat_core::executor::{MockExecutor, RemoteExecutor};
use vfmchat_core::naming::{IdCheckpoint, SeededIds, WorkspacePath};
use vfmchat_core::prompt::{render_upload_event, truncate_history, DialogueHistory, PromptSet, QaPair, UserQuery};
use vfmchat_core::provenance::build_provenance;
use vfmchat_core::workspace::{scan_image_dir, ImageSidecar, ImageSource, Workspace, WorkspaceError};
use vfmchat_core::{builtin_catalog, CompletionBackend, ProvenanceGraph, Registry, ToolExecutor};

use crate::config::{BackendKind, ExecutorKind, SessionConfig};
use crate::error::ServiceError;

pub const CONFIG_FILE: &str = "session.conf";
pub const STATE_FILE: &str = "state.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

const EXECUTOR_TIMEOUT: Duration = Duration::from_secs(300);

/// Config keys a client may override when creating a session over HTTP.
/// Backend, executor, and upload settings stay under the operator's control.
pub const CLIENT_KEYS: [&str; 9] = [
    "tools",
    "seed",
    "id.length",
    "history.max_tokens",
    "history.estimator",
    "engine.max_steps",
    "engine.format_retries",
    "engine.max_output_tokens",
    "engine.temperature",
];

/// Prompt text and tool catalog shared by every session.
pub struct Shared {
    pub prompts: PromptSet,
    pub catalog: Registry,
}

impl Default for Shared {
    fn default() -> Self {
        Self {
            prompts: PromptSet::builtin(),
            catalog: builtin_catalog(),
        }
    }
}

/// Builds the completion backend for a session. A `recording` session gets
/// the backend for `backend.inner`, wrapped by the session itself.
pub type BackendFactory =
    Arc<dyn Fn(&SessionConfig) -> Result<Box<dyn CompletionBackend>, ServiceError> + Send + Sync>;

pub fn default_backend_factory() -> BackendFactory {
    Arc::new(|cfg: &SessionConfig| {
        let kind = match cfg.backend_kind {
            BackendKind::Recording => cfg.backend_inner,
            k => k,
        };
        match kind {
            BackendKind::Remote => Ok(Box::new(RemoteBackend::new(RemoteConfig::new(
                cfg.backend_url.clone(),
                cfg.backend_model.clone(),
            ))) as Box<dyn CompletionBackend>),
            BackendKind::Scripted => {
                let path = cfg.backend_transcript.as_ref().ok_or_else(|| {
                    ServiceError::BadRequest("backend.transcript is required for the scripted backend".into())
                })?;
                Ok(Box::new(ScriptedBackend::load(path)?))
            }
            BackendKind::Recording => Err(ServiceError::BadRequest(
                "backend.inner cannot itself be recording".into(),
            )),
        }
    })
}

/// A backend factory that serves fixed responses, for tests and demos.
pub fn scripted_factory<S: AsRef<str>>(responses: &[S]) -> BackendFactory {
    let responses: Vec<String> = responses.iter().map(|r| r.as_ref().to_string()).collect();
    Arc::new(move |_: &SessionConfig| {
        Ok(Box::new(ScriptedBackend::from_responses(responses.clone())) as Box<dyn CompletionBackend>)
    })
}

fn build_executor(cfg: &SessionConfig) -> Arc<dyn ToolExecutor> {
    match (cfg.executor_kind, &cfg.executor_url) {
        (ExecutorKind::Remote, Some(url)) => Arc::new(RemoteExecutor::new(url.clone(), EXECUTOR_TIMEOUT)),
        _ => Arc::new(MockExecutor),
    }
}

fn enabled_registry(catalog: &Registry, tools: &Option<Vec<String>>) -> Result<Registry, ServiceError> {
    match tools {
        None => Ok(catalog.clone()),
        Some(names) => catalog
            .with_enabled(names)
            .map_err(|e| ServiceError::BadRequest(e.to_string())),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    round_counter: u64,
    ids: Option<IdCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: ImageSource,
    /// Where the API serves the file.
    pub url: String,
}

pub fn file_url(session: &str, path: &WorkspacePath) -> String {
    format!("/v1/files/{session}/{path}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub round: u64,
    pub final_answer: String,
    pub files: Vec<FileEntry>,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryView {
    pub round_counter: u64,
    pub pairs: Vec<HistoryPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub tools: Vec<String>,
    pub config: BTreeMap<String, String>,
}

/// An image sent along with a message.
#[derive(Debug, Clone)]
pub struct Upload {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct Session {
    id: String,
    dir: PathBuf,
    config: SessionConfig,
    registry: Registry,
    history: DialogueHistory,
    workspace: Workspace,
    round_counter: u64,
    backend: Box<dyn CompletionBackend>,
    executor: Arc<dyn ToolExecutor>,
    recorder: Option<Arc<TranscriptWriter>>,
    shared: Arc<Shared>,
}

impl Session {
    pub fn create(
        shared: Arc<Shared>,
        dir: &Path,
        id: &str,
        config: SessionConfig,
        factory: &BackendFactory,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let registry = enabled_registry(&shared.catalog, &config.tools)?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), config.to_text())?;
        let workspace =
            Workspace::open(dir, Box::new(SeededIds::new(config.seed)))?.with_id_len(config.id_len);
        let recorder = match config.backend_kind {
            BackendKind::Recording => {
                let w = Arc::new(TranscriptWriter::create(&dir.join(TRANSCRIPT_FILE))?);
                w.write(&TranscriptRecord::Session {
                    config: config.to_map(),
                })?;
                Some(w)
            }
            _ => None,
        };
        let backend = wrap_backend(factory(&config)?, &recorder);
        let session = Self {
            id: id.to_string(),
            dir: dir.to_path_buf(),
            history: DialogueHistory::new(&config.estimator),
            executor: build_executor(&config),
            config,
            registry,
            workspace,
            round_counter: 0,
            backend,
            recorder,
            shared,
        };
        session.save()?;
        Ok(session)
    }

    pub fn load(
        shared: Arc<Shared>,
        dir: &Path,
        id: &str,
        factory: &BackendFactory,
    ) -> Result<Self, ServiceError> {
        let conf = fs::read_to_string(dir.join(CONFIG_FILE))
            .map_err(|_| ServiceError::NotFound(format!("no such session: {id}")))?;
        let config = SessionConfig::parse_text(&conf)?;
        let registry = enabled_registry(&shared.catalog, &config.tools)?;
        let state: State = match fs::read_to_string(dir.join(STATE_FILE)) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| ServiceError::Internal(format!("corrupt {STATE_FILE}: {e}")))?,
            Err(_) => State::default(),
        };
        let mut pairs = Vec::new();
        if let Ok(text) = fs::read_to_string(dir.join(HISTORY_FILE)) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let p: QaPair = serde_json::from_str(line)
                    .map_err(|e| ServiceError::Internal(format!("corrupt {HISTORY_FILE}: {e}")))?;
                pairs.push(p);
            }
        }
        let ids = match state.ids {
            Some(cp) => SeededIds::resume(cp),
            None => SeededIds::new(config.seed),
        };
        let workspace = Workspace::open(dir, Box::new(ids))?.with_id_len(config.id_len);
        let recorder = match config.backend_kind {
            BackendKind::Recording => Some(Arc::new(TranscriptWriter::append(&dir.join(TRANSCRIPT_FILE))?)),
            _ => None,
        };
        let backend = wrap_backend(factory(&config)?, &recorder);
        Ok(Self {
            id: id.to_string(),
            dir: dir.to_path_buf(),
            history: DialogueHistory::from_pairs(&config.estimator, pairs),
            executor: build_executor(&config),
            config,
            registry,
            workspace,
            round_counter: state.round_counter,
            backend,
            recorder,
            shared,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn history(&self) -> &DialogueHistory {
        &self.history
    }

    pub fn round_counter(&self) -> u64 {
        self.round_counter
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.id.clone(),
            tools: self.registry.enabled_names().iter().map(|s| s.to_string()).collect(),
            config: self.config.to_map(),
        }
    }

    pub fn history_view(&self) -> HistoryView {
        HistoryView {
            round_counter: self.round_counter,
            pairs: self
                .history
                .pairs()
                .iter()
                .map(|p| HistoryPair {
                    question: p.question.clone(),
                    answer: p.answer.clone(),
                })
                .collect(),
        }
    }

    fn record(&self, record: TranscriptRecord) -> Result<(), ServiceError> {
        if let Some(w) = &self.recorder {
            w.write(&record)?;
        }
        Ok(())
    }

    fn save(&self) -> Result<(), ServiceError> {
        let state = State {
            round_counter: self.round_counter,
            ids: self.workspace.id_checkpoint(),
        };
        let json = serde_json::to_string_pretty(&state).expect("state serializes");
        fs::write(self.dir.join(STATE_FILE), json)?;
        let mut lines = String::new();
        for p in self.history.pairs() {
            lines.push_str(&serde_json::to_string(p).expect("pair serializes"));
            lines.push('\n');
        }
        fs::write(self.dir.join(HISTORY_FILE), lines)?;
        Ok(())
    }

    /// Keep only what the history budget retains.
    fn push_history(&mut self, question: String, answer: String) -> Result<(), ServiceError> {
        self.history.push(question, answer);
        let budget = self.config.budget()?;
        self.history = truncate_history(&self.history, &budget).history;
        Ok(())
    }

    /// Store an uploaded image under a fresh root name and log it in the
    /// history.
    pub fn upload(&mut self, upload: &Upload) -> Result<WorkspacePath, ServiceError> {
        let (ext, bytes) = normalize_image(&upload.bytes, self.config.upload_max_bytes)?;
        let hint = Some(upload.name.as_str()).filter(|n| !n.trim().is_empty());
        let (path, org) = self.workspace.new_upload_name(hint, ext)?;
        self.workspace.write_file(&path, &bytes)?;
        self.workspace.write_sidecar(
            &path,
            &ImageSidecar {
                caption: self.config.upload_caption.clone(),
                applied_operations: Vec::new(),
                source: ImageSource::Upload,
                org,
            },
        )?;
        let (q, a) = render_upload_event(&path);
        self.push_history(q, a)?;
        self.record(TranscriptRecord::Upload {
            name: upload.name.clone(),
            path: path.to_string(),
            data: base64::engine::general_purpose::STANDARD.encode(&bytes),
        })?;
        self.save()?;
        Ok(path)
    }

    /// Run one round for `text`, storing `upload` first when given.
    pub fn post_message(
        &mut self,
        text: &str,
        upload: Option<&Upload>,
    ) -> Result<MessageResponse, ServiceError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::BadRequest("message text is empty".into()));
        }
        let uploaded = upload.map(|u| self.upload(u)).transpose()?;
        self.record(TranscriptRecord::Message {
            text: text.to_string(),
        })?;
        let query = UserQuery {
            text: text.to_string(),
            attached_image: uploaded.clone(),
        };
        let budget = self.config.budget()?;
        let engine = Engine::new(
            &self.shared.prompts,
            &self.registry,
            &*self.backend,
            &*self.executor,
        )
        .with_config(self.config.engine_config())
        .with_budget(budget);
        let outcome = engine.run_round(&self.history, &mut self.workspace, &query);
        let result = match outcome {
            Ok(r) => r,
            Err(e) => {
                self.save()?;
                return Err(ServiceError::Backend {
                    message: e.source.to_string(),
                    trace: e.trace.records(),
                });
            }
        };
        self.push_history(text.to_string(), result.final_answer.clone())?;
        self.round_counter += 1;
        self.record(TranscriptRecord::Round {
            final_answer: result.final_answer.clone(),
            termination: result.termination.as_str().to_string(),
            digest: String::new(),
        })?;
        self.save()?;

        let mut files = Vec::new();
        if let Some(p) = &uploaded {
            files.push(FileEntry {
                path: p.to_string(),
                kind: ImageSource::Upload,
                url: file_url(&self.id, p),
            });
        }
        for p in &result.new_files {
            let kind = self
                .workspace
                .read_sidecar(p)?
                .map(|s| s.source)
                .unwrap_or(ImageSource::Derived);
            files.push(FileEntry {
                path: p.to_string(),
                kind,
                url: file_url(&self.id, p),
            });
        }
        Ok(MessageResponse {
            round: self.round_counter,
            final_answer: result.final_answer,
            files,
            trace: result.trace.records(),
            termination: result.termination,
            warnings: result.warnings,
        })
    }

    pub fn provenance(&self) -> Result<ProvenanceGraph, ServiceError> {
        provenance_of_dir(&self.workspace.image_dir(), self.workspace.directory())
    }

    /// Bytes of a workspace file named by its relative path (`image/...`).
    pub fn read_file(&self, rel: &str) -> Result<Vec<u8>, ServiceError> {
        let (path, _) = self
            .workspace
            .parse(rel)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        self.workspace.read_file(&path).map_err(|e| match e {
            WorkspaceError::Missing(p) => ServiceError::NotFound(format!("no such file: {p}")),
            other => other.into(),
        })
    }
}

fn wrap_backend(
    inner: Box<dyn CompletionBackend>,
    recorder: &Option<Arc<TranscriptWriter>>,
) -> Box<dyn CompletionBackend> {
    match recorder {
        Some(w) => Box::new(RecordingBackend::new(inner, w.clone())),
        None => inner,
    }
}

/// Check size and format; PNG and JPEG are stored as sent, other decodable
/// formats are re-encoded as PNG.
pub fn normalize_image(bytes: &[u8], limit: u64) -> Result<(&'static str, Vec<u8>), ServiceError> {
    if bytes.is_empty() {
        return Err(ServiceError::BadRequest("uploaded image is empty".into()));
    }
    if bytes.len() as u64 > limit {
        return Err(ServiceError::TooLarge {
            size: bytes.len() as u64,
            limit,
        });
    }
    let format = image::guess_format(bytes)
        .map_err(|_| ServiceError::UnsupportedFormat("unrecognized image data".into()))?;
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ServiceError::UnsupportedFormat(e.to_string()))?;
    match format {
        image::ImageFormat::Png => Ok(("png", bytes.to_vec())),
        image::ImageFormat::Jpeg => Ok(("jpg", bytes.to_vec())),
        _ => {
            let mut out = Cursor::new(Vec::new());
            decoded
                .write_to(&mut out, image::ImageFormat::Png)
                .map_err(|e| ServiceError::UnsupportedFormat(e.to_string()))?;
            Ok(("png", out.into_inner()))
        }
    }
}

/// Provenance graph of every image file in `image_dir`, including names
/// that fail to parse (reported as diagnostics).
pub fn provenance_of_dir(image_dir: &Path, directory: &str) -> Result<ProvenanceGraph, ServiceError> {
    let (good, bad) = scan_image_dir(image_dir, directory)?;
    let names: Vec<String> = good.iter().map(|p| p.to_string()).chain(bad).collect();
    Ok(build_provenance(names.iter().map(String::as_str)))
}

/// Options a client may send when creating a session.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub tools: Option<Vec<String>>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

struct Slot {
    busy: AtomicBool,
    session: Mutex<Session>,
}

/// Clears the busy flag when a message finishes, even on panic.
struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub fn valid_session_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

/// All sessions under one root directory, loaded lazily.
pub struct SessionStore {
    root: PathBuf,
    shared: Arc<Shared>,
    defaults: SessionConfig,
    factory: BackendFactory,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

impl SessionStore {
    pub fn new(
        root: impl Into<PathBuf>,
        shared: Arc<Shared>,
        defaults: SessionConfig,
        factory: BackendFactory,
    ) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        defaults.validate()?;
        Ok(Self {
            root,
            shared,
            defaults,
            factory,
            slots: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn shared(&self) -> &Shared {
        &self.shared
    }

    pub fn defaults(&self) -> &SessionConfig {
        &self.defaults
    }

    /// Create a session from client options; only [`CLIENT_KEYS`] may be set.
    pub fn create(&self, req: &CreateSession) -> Result<SessionInfo, ServiceError> {
        let mut cfg = self.defaults.clone();
        for (k, v) in &req.config {
            if !CLIENT_KEYS.contains(&k.as_str()) {
                return Err(ServiceError::BadRequest(format!(
                    "config key {k:?} cannot be set by clients"
                )));
            }
            cfg.set(k, v)?;
        }
        if let Some(tools) = &req.tools {
            cfg.tools = Some(tools.clone());
        }
        self.create_with(cfg)
    }

    /// Create a session with a complete config, bypassing the client key
    /// restriction.
    pub fn create_with(&self, cfg: SessionConfig) -> Result<SessionInfo, ServiceError> {
        cfg.validate()?;
        let mut slots = self.slots.lock().expect("store lock");
        let id = loop {
            let candidate = format!("{:016x}", rand::random::<u64>());
            if !slots.contains_key(&candidate) && !self.root.join(&candidate).exists() {
                break candidate;
            }
        };
        let session = Session::create(
            self.shared.clone(),
            &self.root.join(&id),
            &id,
            cfg,
            &self.factory,
        )?;
        let info = session.info();
        slots.insert(
            id,
            Arc::new(Slot {
                busy: AtomicBool::new(false),
                session: Mutex::new(session),
            }),
        );
        Ok(info)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ServiceError> {
        if !valid_session_id(id) {
            return Err(ServiceError::NotFound(format!("no such session: {id}")));
        }
        let mut slots = self.slots.lock().expect("store lock");
        if let Some(s) = slots.get(id) {
            return Ok(s.clone());
        }
        let dir = self.root.join(id);
        if !dir.join(CONFIG_FILE).is_file() {
            return Err(ServiceError::NotFound(format!("no such session: {id}")));
        }
        let session = Session::load(self.shared.clone(), &dir, id, &self.factory)?;
        let slot = Arc::new(Slot {
            busy: AtomicBool::new(false),
            session: Mutex::new(session),
        });
        slots.insert(id.to_string(), slot.clone());
        Ok(slot)
    }

    /// Run `f` with exclusive access; a session already running a message
    /// rejects the call with [`ServiceError::Busy`].
    pub fn with_session_exclusive<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let slot = self.slot(id)?;
        if slot.busy.swap(true, Ordering::AcqRel) {
            return Err(ServiceError::Busy(id.to_string()));
        }
        let _guard = BusyGuard(&slot.busy);
        let mut session = slot.session.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut session)
    }

    /// Run `f` on the session, waiting for any message in progress.
    pub fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let slot = self.slot(id)?;
        let session = slot.session.lock().unwrap_or_else(|p| p.into_inner());
        f(&session)
    }

    pub fn is_busy(&self, id: &str) -> bool {
        self.slot(id)
            .map(|s| s.busy.load(Ordering::Acquire))
            .unwrap_or(false)
    }

    pub fn post_message(
        &self,
        id: &str,
        text: &str,
        upload: Option<&Upload>,
    ) -> Result<MessageResponse, ServiceError> {
        self.with_session_exclusive(id, |s| s.post_message(text, upload))
    }

    pub fn history(&self, id: &str) -> Result<HistoryView, ServiceError> {
        self.with_session(id, |s| Ok(s.history_view()))
    }

    pub fn provenance(&self, id: &str) -> Result<ProvenanceGraph, ServiceError> {
        self.with_session(id, |s| s.provenance())
    }

    pub fn read_file(&self, id: &str, rel: &str) -> Result<Vec<u8>, ServiceError> {
        self.with_session(id, |s| s.read_file(rel))
    }

    /// Drop in-memory state so the next access reloads from disk.
    pub fn evict(&self, id: &str) {
        self.slots.lock().expect("store lock").remove(id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vfmchat_core::executor::PLACEHOLDER_PNG;

    fn store(dir: &Path, responses: &[&str]) -> SessionStore {
        SessionStore::new(
            dir,
            Arc::new(Shared::default()),
            SessionConfig::default(),
            scripted_factory(responses),
        )
        .unwrap()
    }

    fn png_upload(name: &str) -> Upload {
        Upload {
            name: name.into(),
            bytes: PLACEHOLDER_PNG.to_vec(),
        }
    }

    const ANSWER: &str = " No\nAI: Hello there.";

    #[test]
    fn round_appends_history_pair() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[ANSWER]);
        let id = st.create(&CreateSession::default()).unwrap().id;
        let r = st.post_message(&id, "hi", None).unwrap();
        assert_eq!(r.final_answer, "Hello there.");
        assert_eq!(r.round, 1);
        let h = st.history(&id).unwrap();
        assert_eq!(h.round_counter, 1);
        assert_eq!(
            h.pairs,
            vec![HistoryPair {
                question: "hi".into(),
                answer: "Hello there.".into()
            }]
        );
    }

    #[test]
    fn upload_is_logged_with_default_caption() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[ANSWER]);
        let id = st.create(&CreateSession::default()).unwrap().id;
        let r = st
            .post_message(&id, "what is this", Some(&png_upload("cat.png")))
            .unwrap();
        assert_eq!(r.files.len(), 1);
        assert_eq!(r.files[0].kind, ImageSource::Upload);
        let h = st.history(&id).unwrap();
        assert_eq!(h.pairs.len(), 2);
        assert!(h.pairs[0].question.contains(&r.files[0].path));
        let sidecar: ImageSidecar = serde_json::from_slice(
            &fs::read(tmp.path().join(&id).join(format!("{}.meta.json", r.files[0].path))).unwrap(),
        )
        .unwrap();
        assert_eq!(sidecar.caption, "uploaded image");
        assert_eq!(sidecar.org.unwrap().as_str(), "cat");
    }

    #[test]
    fn persistence_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[ANSWER, ANSWER]);
        let id = st.create(&CreateSession::default()).unwrap().id;
        st.post_message(&id, "one", Some(&png_upload("a.png"))).unwrap();
        let before = st.history(&id).unwrap();
        let ckpt_before = fs::read_to_string(tmp.path().join(&id).join(STATE_FILE)).unwrap();
        drop(st);

        let st2 = store(tmp.path(), &[ANSWER]);
        assert_eq!(st2.history(&id).unwrap(), before);
        let path = st2
            .with_session_exclusive(&id, |s| s.upload(&png_upload("b.png")))
            .unwrap();
        // The id stream resumes where it stopped, so the second upload gets a
        // fresh id rather than repeating the first.
        assert_ne!(path.to_string(), before.pairs[0].question);
        let ckpt_after = fs::read_to_string(tmp.path().join(&id).join(STATE_FILE)).unwrap();
        assert_ne!(ckpt_before, ckpt_after);
        assert_eq!(st2.history(&id).unwrap().round_counter, 1);
    }

    #[test]
    fn sessions_are_isolated() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[ANSWER]);
        let a = st.create(&CreateSession::default()).unwrap().id;
        let b = st.create(&CreateSession::default()).unwrap().id;
        let r = st.post_message(&a, "hi", Some(&png_upload("x.png"))).unwrap();
        assert!(st.history(&b).unwrap().pairs.is_empty());
        assert!(st.read_file(&a, &r.files[0].path).is_ok());
        assert!(matches!(
            st.read_file(&b, &r.files[0].path),
            Err(ServiceError::NotFound(_))
        ));
    }

    #[test]
    fn busy_session_rejects_second_message() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[ANSWER]);
        let id = st.create(&CreateSession::default()).unwrap().id;
        let inner = st.with_session_exclusive(&id, |_| {
            Ok(st.with_session_exclusive(&id, |_| Ok(())))
        });
        assert!(matches!(inner.unwrap(), Err(ServiceError::Busy(_))));
        assert!(!st.is_busy(&id));
    }

    #[test]
    fn unknown_session_and_tool() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[]);
        assert!(matches!(st.history("nope"), Err(ServiceError::NotFound(_))));
        assert!(matches!(st.history("../etc"), Err(ServiceError::NotFound(_))));
        let err = st
            .create(&CreateSession {
                tools: Some(vec!["Teleport Image".into()]),
                ..Default::default()
            })
            .unwrap_err();
        assert!(err.to_string().contains("Teleport Image"));
        let err = st
            .create(&CreateSession {
                config: [("backend.url".to_string(), "http://x".to_string())].into(),
                ..Default::default()
            })
            .unwrap_err();
        assert_eq!(err.status(), 400);
    }

    #[test]
    fn default_session_enables_all_tools() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[]);
        assert_eq!(st.create(&CreateSession::default()).unwrap().tools.len(), 22);
    }

    #[test]
    fn upload_validation() {
        assert!(matches!(
            normalize_image(&[], 10),
            Err(ServiceError::BadRequest(_))
        ));
        assert!(matches!(
            normalize_image(&PLACEHOLDER_PNG, 10),
            Err(ServiceError::TooLarge { .. })
        ));
        assert!(matches!(
            normalize_image(b"not an image at all", 1000),
            Err(ServiceError::UnsupportedFormat(_))
        ));
        let (ext, bytes) = normalize_image(&PLACEHOLDER_PNG, 1000).unwrap();
        assert_eq!((ext, bytes.as_slice()), ("png", &PLACEHOLDER_PNG[..]));

        let img = image::DynamicImage::new_rgb8(2, 2);
        let mut bmp = Cursor::new(Vec::new());
        img.write_to(&mut bmp, image::ImageFormat::Bmp).unwrap();
        let (ext, bytes) = normalize_image(bmp.get_ref(), 1 << 20).unwrap();
        assert_eq!(ext, "png");
        assert_eq!(image::guess_format(&bytes).unwrap(), image::ImageFormat::Png);
    }

    #[test]
    fn backend_failure_keeps_history_unchanged() {
        let tmp = tempfile::tempdir().unwrap();
        let st = store(tmp.path(), &[]);
        let id = st.create(&CreateSession::default()).unwrap().id;
        let err = st.post_message(&id, "hi", None).unwrap_err();
        assert_eq!(err.status(), 502);
        assert_eq!(st.history(&id).unwrap().round_counter, 0);
        assert!(st.history(&id).unwrap().pairs.is_empty());
    }
}
