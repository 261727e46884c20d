use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{derived_caption, store_output, validate_inputs, ExecError, ToolExecutor, ToolOutput};
use crate::registry::ToolSpec;
use crate::workspace::Workspace;

/// Cap on image bytes sent or received in one call.
pub const MAX_PAYLOAD_BYTES: u64 = 16 * 1024 * 1024;

/// Body of `POST {endpoint}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool: String,
    pub fields: Vec<String>,
    /// Base64 of the input image, for tools that take one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Base64 of the output image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Forwards tool calls to a model service speaking [`ToolRequest`] /
/// [`ToolResponse`] JSON.
pub struct RemoteExecutor {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteExecutor {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

// base64 grows data by 4/3; allow that plus room for the JSON envelope.
const MAX_BODY_BYTES: u64 = MAX_PAYLOAD_BYTES / 3 * 4 + 64 * 1024;

impl ToolExecutor for RemoteExecutor {
    fn execute(
        &self,
        spec: &ToolSpec,
        fields: &[String],
        workspace: &mut Workspace,
    ) -> Result<ToolOutput, ExecError> {
        let inputs = validate_inputs(spec, fields, workspace)?;
        let image = match &inputs.image {
            Some(path) => {
                let bytes = workspace.read_file(path)?;
                if bytes.len() as u64 > MAX_PAYLOAD_BYTES {
                    return Err(ExecError::Oversized {
                        size: bytes.len() as u64,
                        cap: MAX_PAYLOAD_BYTES,
                    });
                }
                Some(B64.encode(bytes))
            }
            None => None,
        };
        let request = ToolRequest {
            tool: spec.name.clone(),
            fields: fields.to_vec(),
            image,
        };
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&request)
            .map_err(|e| ExecError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let reply: Result<ToolResponse, _> = response
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_json();
        let reply = match reply {
            Ok(r) => r,
            Err(ureq::Error::BodyExceedsLimit(_)) => {
                return Err(ExecError::Oversized {
                    size: MAX_BODY_BYTES + 1,
                    cap: MAX_BODY_BYTES,
                })
            }
            Err(e) if status == 200 => return Err(ExecError::MalformedResponse(e.to_string())),
            Err(_) => return Err(ExecError::Remote(format!("HTTP {status}"))),
        };
        if let Some(error) = reply.error {
            return Err(ExecError::Remote(error));
        }
        if status != 200 {
            return Err(ExecError::Remote(format!("HTTP {status}")));
        }
        if !spec.produces_image() {
            return reply
                .text
                .map(ToolOutput::Text)
                .ok_or_else(|| ExecError::MalformedResponse("expected text".into()));
        }
        let data = reply
            .image
            .ok_or_else(|| ExecError::MalformedResponse("expected an image".into()))?;
        let bytes = B64
            .decode(data.as_bytes())
            .map_err(|e| ExecError::MalformedResponse(e.to_string()))?;
        if bytes.len() as u64 > MAX_PAYLOAD_BYTES {
            return Err(ExecError::Oversized {
                size: bytes.len() as u64,
                cap: MAX_PAYLOAD_BYTES,
            });
        }
        let annotation = reply.text.unwrap_or_else(|| inputs.texts.join(", "));
        let caption = match (&inputs.image, &spec.operation_slug) {
            (Some(prev), Some(slug)) => {
                let parent = workspace
                    .read_sidecar(prev)?
                    .map(|s| s.caption)
                    .unwrap_or_default();
                derived_caption(&annotation, slug.as_str(), &parent)
            }
            _ => annotation,
        };
        Ok(ToolOutput::Image(store_output(
            workspace, spec, &inputs, &bytes, caption,
        )?))
    }
}
