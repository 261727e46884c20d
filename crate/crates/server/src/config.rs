//! `key = value` settings shared by the config file, `session.conf`, and
//! per-session overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use vfmchat_core::engine::EngineConfig;
use vfmchat_core::kv;
use vfmchat_core::naming::DEFAULT_ID_LEN;
use vfmchat_core::prompt::{TokenBudget, DEFAULT_ESTIMATOR, DEFAULT_MAX_HISTORY_TOKENS};

use crate::error::ServiceError;

pub const DEFAULT_UPLOAD_MAX_BYTES: u64 = 16 * 1024 * 1024;
pub const DEFAULT_UPLOAD_CAPTION: &str = "uploaded image";
pub const DEFAULT_BACKEND_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_BACKEND_MODEL: &str = "text-davinci-003";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Remote,
    Scripted,
    /// Another backend (`backend.inner`) wrapped in a transcript recorder.
    Recording,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "remote" => Ok(Self::Remote),
            "scripted" => Ok(Self::Scripted),
            "recording" => Ok(Self::Recording),
            other => Err(format!("unknown backend kind {other:?}")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Remote => "remote",
            Self::Scripted => "scripted",
            Self::Recording => "recording",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorKind {
    Mock,
    Remote,
}

impl FromStr for ExecutorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(Self::Mock),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown executor kind {other:?}")),
        }
    }
}

impl fmt::Display for ExecutorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mock => "mock",
            Self::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Enabled tool names; `None` enables the whole catalog.
    pub tools: Option<Vec<String>>,
    pub seed: u64,
    pub id_len: usize,
    pub max_history_tokens: usize,
    pub estimator: String,
    pub max_steps: usize,
    pub format_retries: usize,
    pub max_output_tokens: u32,
    pub temperature: f32,
    pub backend_kind: BackendKind,
    pub backend_inner: BackendKind,
    pub backend_url: String,
    pub backend_model: String,
    pub backend_transcript: Option<PathBuf>,
    pub executor_kind: ExecutorKind,
    pub executor_url: Option<String>,
    pub upload_max_bytes: u64,
    pub upload_caption: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            tools: None,
            seed: 0,
            id_len: DEFAULT_ID_LEN,
            max_history_tokens: DEFAULT_MAX_HISTORY_TOKENS,
            estimator: DEFAULT_ESTIMATOR.to_string(),
            max_steps: engine.max_steps,
            format_retries: engine.format_retries,
            max_output_tokens: engine.max_output_tokens,
            temperature: engine.temperature,
            backend_kind: BackendKind::Remote,
            backend_inner: BackendKind::Remote,
            backend_url: DEFAULT_BACKEND_URL.to_string(),
            backend_model: DEFAULT_BACKEND_MODEL.to_string(),
            backend_transcript: None,
            executor_kind: ExecutorKind::Mock,
            executor_url: None,
            upload_max_bytes: DEFAULT_UPLOAD_MAX_BYTES,
            upload_caption: DEFAULT_UPLOAD_CAPTION.to_string(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ServiceError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ServiceError::BadRequest(format!("config key {key}: {e}")))
}

impl SessionConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ServiceError> {
        let value = value.trim();
        match key {
            "tools" => {
                self.tools = match value {
                    "" | "all" => None,
                    list => Some(
                        list.split(',')
                            .map(|t| t.trim().to_string())
                            .filter(|t| !t.is_empty())
                            .collect(),
                    ),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "id.length" => self.id_len = parse(key, value)?,
            "history.max_tokens" => self.max_history_tokens = parse(key, value)?,
            "history.estimator" => self.estimator = value.to_string(),
            "engine.max_steps" => self.max_steps = parse(key, value)?,
            "engine.format_retries" => self.format_retries = parse(key, value)?,
            "engine.max_output_tokens" => self.max_output_tokens = parse(key, value)?,
            "engine.temperature" => self.temperature = parse(key, value)?,
            "backend.kind" => self.backend_kind = parse(key, value)?,
            "backend.inner" => self.backend_inner = parse(key, value)?,
            "backend.url" => self.backend_url = value.to_string(),
            "backend.model" => self.backend_model = value.to_string(),
            "backend.transcript" => {
                self.backend_transcript = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            "executor.kind" => self.executor_kind = parse(key, value)?,
            "executor.url" => self.executor_url = (!value.is_empty()).then(|| value.to_string()),
            "upload.max_bytes" => self.upload_max_bytes = parse(key, value)?,
            "upload.caption" => self.upload_caption = value.to_string(),
            other => return Err(ServiceError::BadRequest(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply<'a, I>(&mut self, pairs: I) -> Result<(), ServiceError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::BadRequest(m.to_string()));
        if self.id_len == 0 || self.id_len > 32 {
            return bad("id.length must be between 1 and 32");
        }
        if self.max_steps == 0 {
            return bad("engine.max_steps must be at least 1");
        }
        if self.max_output_tokens == 0 {
            return bad("engine.max_output_tokens must be positive");
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return bad("engine.temperature must be in [0, 1]");
        }
        if self.executor_kind == ExecutorKind::Remote && self.executor_url.is_none() {
            return bad("executor.url is required for the remote executor");
        }
        if self.backend_inner == BackendKind::Recording {
            return bad("backend.inner cannot itself be recording");
        }
        self.budget().map(|_| ())
    }

    /// Parse `key = value` lines over the defaults.
    pub fn parse_text(text: &str) -> Result<Self, ServiceError> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), ServiceError> {
        let doc = kv::parse_flat(text, '=')
            .map_err(|e| ServiceError::BadRequest(format!("config: {e}")))?;
        self.apply(doc.iter().map(|e| (e.key.as_str(), e.value.as_str())))
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put(
            "tools",
            self.tools.as_ref().map(|t| t.join(", ")).unwrap_or_else(|| "all".into()),
        );
        put("seed", self.seed.to_string());
        put("id.length", self.id_len.to_string());
        put("history.max_tokens", self.max_history_tokens.to_string());
        put("history.estimator", self.estimator.clone());
        put("engine.max_steps", self.max_steps.to_string());
        put("engine.format_retries", self.format_retries.to_string());
        put("engine.max_output_tokens", self.max_output_tokens.to_string());
        put("engine.temperature", self.temperature.to_string());
        put("backend.kind", self.backend_kind.to_string());
        put("backend.inner", self.backend_inner.to_string());
        put("backend.url", self.backend_url.clone());
        put("backend.model", self.backend_model.clone());
        if let Some(t) = &self.backend_transcript {
            put("backend.transcript", t.display().to_string());
        }
        put("executor.kind", self.executor_kind.to_string());
        if let Some(u) = &self.executor_url {
            put("executor.url", u.clone());
        }
        put("upload.max_bytes", self.upload_max_bytes.to_string());
        put("upload.caption", self.upload_caption.clone());
        m
    }

    pub fn to_text(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            max_steps: self.max_steps,
            format_retries: self.format_retries,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
            ..EngineConfig::default()
        }
    }

    pub fn budget(&self) -> Result<TokenBudget, ServiceError> {
        TokenBudget::new(self.max_history_tokens, &self.estimator)
            .map_err(|e| ServiceError::BadRequest(format!("history settings: {e}")))
    }
}
