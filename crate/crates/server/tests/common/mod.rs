#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;
use vfmchat_core::backend::{BackendError, CompletionBackend, CompletionRequest, ScriptedBackend};
use vfmchat_core::naming::{IdSource, SeededIds, DEFAULT_ID_LEN};
use vfmchat_server::{BackendFactory, SessionConfig, SessionStore, Shared};

pub const CARTOON_QUERY: &str = "generate a red flower conditioned on the predicted depth of this image and then make it like a cartoon, step by step";

/// Paths the depth-to-cartoon chain produces in a fresh session with `seed` after
/// uploading a file whose org token is `org`: upload, depth, depth2image,
/// pix2pix.
pub fn cartoon_paths(seed: u64, org: &str) -> [String; 4] {
    let mut ids = SeededIds::new(seed);
    let id: Vec<String> = (0..4).map(|_| ids.next_id(DEFAULT_ID_LEN)).collect();
    [
        format!("image/{}.png", id[0]),
        format!("image/{}_depth-of_{}_{org}.png", id[1], id[0]),
        format!("image/{}_depth2image_{}_{org}.png", id[2], id[1]),
        format!("image/{}_pix2pix_{}_{org}.png", id[3], id[2]),
    ]
}

pub fn cartoon_steps(paths: &[String; 4]) -> Vec<String> {
    vec![
        format!(" Yes\nAction: Predict Depth On Image\nAction Input: {}", paths[0]),
        format!(
            " Yes\nAction: Generate Image Condition On Depth\nAction Input: {}, a red flower",
            paths[1]
        ),
        format!(
            " Yes\nAction: Instruct Image Using Text\nAction Input: {}, make it like a cartoon",
            paths[2]
        ),
        format!(" No\nAI: Here is the cartoon red flower: {}", paths[3]),
    ]
}

/// Wraps a backend and keeps every prompt it is sent.
pub struct Capture {
    pub inner: Box<dyn CompletionBackend>,
    pub prompts: Arc<Mutex<Vec<String>>>,
}

impl CompletionBackend for Capture {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.inner.complete(request)
    }
}

/// Scripted factory that also collects the prompts of every backend it builds.
pub fn capturing_factory(responses: Vec<String>) -> (BackendFactory, Arc<Mutex<Vec<String>>>) {
    let prompts = Arc::new(Mutex::new(Vec::new()));
    let seen = prompts.clone();
    let factory: BackendFactory = Arc::new(move |_: &SessionConfig| {
        Ok(Box::new(Capture {
            inner: Box::new(ScriptedBackend::from_responses(responses.clone())),
            prompts: seen.clone(),
        }) as Box<dyn CompletionBackend>)
    });
    (factory, prompts)
}

pub fn store_with(dir: &Path, cfg: SessionConfig, factory: BackendFactory) -> Arc<SessionStore> {
    Arc::new(SessionStore::new(dir, Arc::new(Shared::default()), cfg, factory).unwrap())
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    send(app, req.body(body).unwrap()).await
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("not json ({e}): {}", String::from_utf8_lossy(bytes)))
}

pub fn b64(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
