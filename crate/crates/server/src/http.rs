//! HTTP API over a [`SessionStore`].
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/v1/sessions` | optional [`CreateSession`] JSON |
//! | POST | `/v1/sessions/{id}/messages` | [`MessageRequest`] JSON, or multipart `text` + `image` |
//! | GET | `/v1/sessions/{id}/history` | |
//! | GET | `/v1/sessions/{id}/provenance` | |
//! | GET | `/v1/files/{id}/image/{name}` | |
//! | GET | `/v1/tools` | |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use vfmchat_core::registry::FieldRole;

use crate::error::ServiceError;
use crate::session::{valid_session_id, CreateSession, SessionStore, Upload};

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::warn!(error = %self.0, "request failed");
        }
        (status, Json(serde_json::json!({ "error": self.0.body() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::BadRequest(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePayload {
    pub name: String,
    /// Base64 (standard alphabet) image bytes.
    pub data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImagePayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolView {
    pub name: String,
    pub arity: usize,
    pub input_roles: Vec<FieldRole>,
    pub output_kind: FieldRole,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operation_slug: Option<String>,
    pub usage_prompt: String,
}

/// Run blocking store work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Internal(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

pub fn router(store: Arc<SessionStore>) -> Router {
    // Base64 inflates uploads by a third; leave room for the JSON around it.
    let limit = (store.defaults().upload_max_bytes as usize)
        .saturating_mul(4)
        .div_ceil(3)
        .saturating_add(64 * 1024);
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/history", get(history))
        .route("/v1/sessions/{id}/provenance", get(provenance))
        .route("/v1/files/{*rest}", get(file))
        .route("/v1/tools", get(tools))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(store)
}

async fn create_session(State(store): State<Arc<SessionStore>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad(format!("invalid request body: {e}")))?
    };
    let info = blocking(move || store.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn read_multipart(mut mp: Multipart) -> ApiResult<(String, Option<Upload>)> {
    let mut text = None;
    let mut upload = None;
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| bad(format!("invalid multipart body: {e}")))?
    {
        match field.name() {
            Some("text") => {
                text = Some(field.text().await.map_err(|e| bad(e.to_string()))?);
            }
            Some("image") => {
                let name = field.file_name().unwrap_or_default().to_string();
                let bytes = field.bytes().await.map_err(|e| bad(e.to_string()))?;
                upload = Some(Upload {
                    name,
                    bytes: bytes.to_vec(),
                });
            }
            other => return Err(bad(format!("unexpected multipart field {other:?}"))),
        }
    }
    let text = text.ok_or_else(|| bad("multipart body has no text field"))?;
    Ok((text, upload))
}

async fn post_message(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    req: Request,
) -> ApiResult<Response> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (text, upload) = if is_multipart {
        let mp = Multipart::from_request(req, &())
            .await
            .map_err(|e| bad(e.body_text()))?;
        read_multipart(mp).await?
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| bad(e.body_text()))?;
        let msg: MessageRequest =
            serde_json::from_slice(&body).map_err(|e| bad(format!("invalid request body: {e}")))?;
        let upload = match msg.image {
            Some(img) => Some(Upload {
                name: img.name,
                bytes: base64::engine::general_purpose::STANDARD
                    .decode(img.data.as_bytes())
                    .map_err(|e| bad(format!("image data is not base64: {e}")))?,
            }),
            None => None,
        };
        (msg.text, upload)
    };
    let resp = blocking(move || store.post_message(&id, &text, upload.as_ref())).await?;
    Ok(Json(resp).into_response())
}

async fn history(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || store.history(&id)).await?;
    Ok(Json(view).into_response())
}

async fn provenance(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let graph = blocking(move || store.provenance(&id)).await?;
    Ok(Json(graph).into_response())
}

/// Split `{session}/{relative path}`, rejecting anything that could step
/// outside the session workspace.
pub fn split_file_path(rest: &str) -> Result<(&str, &str), ServiceError> {
    let reject = || ServiceError::BadRequest(format!("invalid file path {rest:?}"));
    if rest.contains('\\') || rest.contains('\0') {
        return Err(reject());
    }
    if rest.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..") {
        return Err(reject());
    }
    let (session, rel) = rest.split_once('/').ok_or_else(reject)?;
    if !valid_session_id(session) {
        return Err(reject());
    }
    Ok((session, rel))
}

async fn file(State(store): State<Arc<SessionStore>>, Path(rest): Path<String>) -> ApiResult<Response> {
    let (session, rel) = split_file_path(&rest)?;
    let (session, rel) = (session.to_string(), rel.to_string());
    let mime = if rel.ends_with(".png") {
        "image/png"
    } else if rel.ends_with(".jpg") || rel.ends_with(".jpeg") {
        "image/jpeg"
    } else {
        "application/octet-stream"
    };
    let bytes = blocking(move || store.read_file(&session, &rel)).await?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

pub fn tool_views(store: &SessionStore) -> Vec<ToolView> {
    store
        .shared()
        .catalog
        .specs()
        .iter()
        .map(|s| ToolView {
            name: s.name.clone(),
            arity: s.input_arity(),
            input_roles: s.input_roles.clone(),
            output_kind: s.output_kind,
            operation_slug: s.operation_slug.as_ref().map(|o| o.as_str().to_string()),
            usage_prompt: s.usage_prompt.clone(),
        })
        .collect()
}

async fn tools(State(store): State<Arc<SessionStore>>) -> Json<Vec<ToolView>> {
    Json(tool_views(&store))
}
