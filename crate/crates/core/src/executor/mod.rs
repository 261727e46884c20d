//! Tool execution. The mock executor is deterministic and needs no models;
//! the remote executor forwards calls to a model service over HTTP.

mod remote;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::naming::WorkspacePath;
use crate::registry::{ArityMismatch, FieldRole, OutputKind, ToolSpec};
use crate::workspace::{ImageSidecar, ImageSource, Workspace, WorkspaceError};

pub use remote::{RemoteExecutor, ToolRequest, ToolResponse, MAX_PAYLOAD_BYTES};

/// A 1x1 grey PNG written by the mock executor.
pub const PLACEHOLDER_PNG: [u8; 69] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
    0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90, 0x77, 0x53,
    0xde, 0x00, 0x00, 0x00, 0x0c, 0x49, 0x44, 0x41, 0x54, 0x78, 0xda, 0x63, 0x68, 0x68, 0x68, 0x00,
    0x00, 0x03, 0x04, 0x01, 0x81, 0x75, 0x2e, 0x01, 0xbc, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e,
    0x44, 0xae, 0x42, 0x60, 0x82,
];

const NO_CAPTION: &str = "an image without a description";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolOutput {
    Text(String),
    Image(WorkspacePath),
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Arity(#[from] ArityMismatch),
    #[error("not a valid image path: {0}")]
    BadImagePath(String),
    #[error("no such image: {0}")]
    MissingImage(String),
    #[error("tool {0:?} is not handled by this executor")]
    Unsupported(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("tool service unreachable: {0}")]
    Transport(String),
    #[error("tool service error: {0}")]
    Remote(String),
    #[error("malformed tool service response: {0}")]
    MalformedResponse(String),
    #[error("payload of {size} bytes exceeds the {cap} byte limit")]
    Oversized { size: u64, cap: u64 },
}

pub trait ToolExecutor: Send + Sync {
    /// Run `spec` on already-split input `fields`, writing any output image
    /// into `workspace`.
    fn execute(
        &self,
        spec: &ToolSpec,
        fields: &[String],
        workspace: &mut Workspace,
    ) -> Result<ToolOutput, ExecError>;
}

impl<T: ToolExecutor + ?Sized> ToolExecutor for Arc<T> {
    fn execute(
        &self,
        spec: &ToolSpec,
        fields: &[String],
        workspace: &mut Workspace,
    ) -> Result<ToolOutput, ExecError> {
        (**self).execute(spec, fields, workspace)
    }
}

/// Checked inputs of one call: the image argument (if the tool takes one)
/// and the text arguments in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolInputs {
    pub image: Option<WorkspacePath>,
    pub texts: Vec<String>,
}

pub fn validate_inputs(
    spec: &ToolSpec,
    fields: &[String],
    workspace: &Workspace,
) -> Result<ToolInputs, ExecError> {
    if fields.len() != spec.input_arity() {
        return Err(ArityMismatch {
            expected: spec.input_arity(),
            got: fields.len(),
        }
        .into());
    }
    let mut inputs = ToolInputs {
        image: None,
        texts: Vec::new(),
    };
    for (role, field) in spec.input_roles.iter().zip(fields) {
        match role {
            FieldRole::ImagePath => {
                let (path, _) = workspace
                    .parse(field)
                    .map_err(|_| ExecError::BadImagePath(field.clone()))?;
                if !workspace.exists(&path) {
                    return Err(ExecError::MissingImage(field.clone()));
                }
                inputs.image.get_or_insert(path);
            }
            FieldRole::Text => inputs.texts.push(field.clone()),
        }
    }
    Ok(inputs)
}

/// Store `bytes` as the output of `spec`: a chained name when there is an
/// input image, otherwise a fresh root name.
pub fn store_output(
    workspace: &mut Workspace,
    spec: &ToolSpec,
    inputs: &ToolInputs,
    bytes: &[u8],
    caption: String,
) -> Result<WorkspacePath, ExecError> {
    let (path, sidecar) = match (&inputs.image, &spec.operation_slug) {
        (Some(prev), Some(slug)) => {
            let parent = workspace.read_sidecar(prev)?;
            let mut ops = parent
                .as_ref()
                .map(|s| s.applied_operations.clone())
                .unwrap_or_default();
            ops.push(slug.to_string());
            let path = workspace.chain_name(slug, prev)?;
            let sidecar = ImageSidecar {
                caption,
                applied_operations: ops,
                source: ImageSource::Derived,
                org: None,
            };
            (path, sidecar)
        }
        _ => {
            let (path, _) = workspace.new_upload_name(None, "png")?;
            let sidecar = ImageSidecar {
                caption,
                applied_operations: Vec::new(),
                source: ImageSource::Generated,
                org: None,
            };
            (path, sidecar)
        }
    };
    workspace.write_file(&path, bytes)?;
    workspace.write_sidecar(&path, &sidecar)?;
    Ok(path)
}

fn caption_of(workspace: &Workspace, path: &WorkspacePath) -> Result<String, ExecError> {
    Ok(workspace
        .read_sidecar(path)?
        .map(|s| s.caption)
        .filter(|c| !c.is_empty())
        .unwrap_or_else(|| NO_CAPTION.to_string()))
}

/// Caption of a derived image: `{annotation} ({slug} of {input caption})`.
pub fn derived_caption(annotation: &str, slug: &str, input_caption: &str) -> String {
    format!("{} ({slug} of {input_caption})", annotation.trim())
        .trim()
        .to_string()
}

/// Deterministic stand-in for the visual models. Image tools write a
/// placeholder PNG whose sidecar records the operation; text tools answer
/// from the input image's caption.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockExecutor;

impl ToolExecutor for MockExecutor {
    fn execute(
        &self,
        spec: &ToolSpec,
        fields: &[String],
        workspace: &mut Workspace,
    ) -> Result<ToolOutput, ExecError> {
        let inputs = validate_inputs(spec, fields, workspace)?;
        match (spec.output_kind, &inputs.image) {
            (OutputKind::Text, Some(image)) => {
                let caption = caption_of(workspace, image)?;
                if inputs.texts.is_empty() {
                    Ok(ToolOutput::Text(caption))
                } else {
                    Ok(ToolOutput::Text(format!("Based on the image: {caption}")))
                }
            }
            (OutputKind::Text, None) => Err(ExecError::Unsupported(spec.name.clone())),
            (OutputKind::ImagePath, Some(image)) => {
                let slug = spec
                    .operation_slug
                    .as_ref()
                    .ok_or_else(|| ExecError::Unsupported(spec.name.clone()))?;
                let caption = derived_caption(
                    &inputs.texts.join(", "),
                    slug.as_str(),
                    &caption_of(workspace, image)?,
                );
                let path = store_output(workspace, spec, &inputs, &PLACEHOLDER_PNG, caption)?;
                Ok(ToolOutput::Image(path))
            }
            (OutputKind::ImagePath, None) => {
                let caption = inputs.texts.join(", ");
                let path = store_output(workspace, spec, &inputs, &PLACEHOLDER_PNG, caption)?;
                Ok(ToolOutput::Image(path))
            }
        }
    }
}

/// Dispatch by tool name, falling back to a default executor.
pub struct RoutedExecutor {
    default: Arc<dyn ToolExecutor>,
    routes: HashMap<String, Arc<dyn ToolExecutor>>,
}

impl RoutedExecutor {
    pub fn new(default: Arc<dyn ToolExecutor>) -> Self {
        Self {
            default,
            routes: HashMap::new(),
        }
    }

    pub fn route(mut self, tool: impl Into<String>, executor: Arc<dyn ToolExecutor>) -> Self {
        self.routes.insert(tool.into(), executor);
        self
    }
}

impl ToolExecutor for RoutedExecutor {
    fn execute(
        &self,
        spec: &ToolSpec,
        fields: &[String],
        workspace: &mut Workspace,
    ) -> Result<ToolOutput, ExecError> {
        self.routes
            .get(&spec.name)
            .unwrap_or(&self.default)
            .execute(spec, fields, workspace)
    }
}
