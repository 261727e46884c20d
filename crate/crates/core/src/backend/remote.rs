use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{truncate_at_stop, BackendError, CompletionBackend, CompletionRequest};

pub const API_KEY_ENV: &str = "VFMCHAT_API_KEY";
const MAX_RESPONSE_BYTES: u64 = 4 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    prompt: &'a str,
    stop: &'a [String],
    max_tokens: u32,
    temperature: f32,
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

/// Client for a text-completion endpoint (`POST {base_url}/completions`).
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let url = format!("{}/completions", self.config.base_url.trim_end_matches('/'));
        let body = Body {
            model: &self.config.model,
            prompt: &request.prompt,
            stop: &request.stop,
            max_tokens: request.max_output_tokens,
            temperature: request.temperature,
        };
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let reader = response.body_mut().with_config().limit(MAX_RESPONSE_BYTES);
        if status != 200 {
            let text = reader.read_to_string().unwrap_or_default();
            return Err(BackendError::Http {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        let reply: Reply = reader
            .read_json()
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
        Ok(truncate_at_stop(&choice.text, &request.stop).to_string())
    }
}
