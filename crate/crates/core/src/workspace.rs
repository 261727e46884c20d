//! A session-private directory of images plus their `.meta.json` sidecars.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::naming::{
    self, FileId, IdCheckpoint, IdSource, NameError, OrgToken, ParsedName, Slug, WorkspacePath,
    DEFAULT_DIRECTORY, DEFAULT_EXTENSION, DEFAULT_ID_LEN, DEFAULT_ID_RETRIES, IMAGE_EXTENSIONS,
};

pub const SIDECAR_SUFFIX: &str = ".meta.json";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Name(#[from] NameError),
    #[error("no such file in the workspace: {0}")]
    Missing(String),
    #[error("workspace io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt sidecar for {path}: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> WorkspaceError {
    let path = path.as_ref().display().to_string();
    move |source| WorkspaceError::Io { path, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Upload,
    Derived,
    /// Produced from text alone; a chain root like an upload.
    Generated,
}

/// Per-image metadata kept beside the file as `{file}.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub caption: String,
    pub applied_operations: Vec<String>,
    pub source: ImageSource,
    /// Org token recorded at upload time from the user's file name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub org: Option<OrgToken>,
}

pub struct Workspace {
    root: PathBuf,
    directory: String,
    id_len: usize,
    id_retries: usize,
    ids: Box<dyn IdSource>,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace")
            .field("root", &self.root)
            .field("directory", &self.directory)
            .field("id_len", &self.id_len)
            .finish_non_exhaustive()
    }
}

impl Workspace {
    /// Open (creating if needed) a workspace rooted at `root`.
    pub fn open(root: impl Into<PathBuf>, ids: Box<dyn IdSource>) -> Result<Self, WorkspaceError> {
        let ws = Self {
            root: root.into(),
            directory: DEFAULT_DIRECTORY.to_string(),
            id_len: DEFAULT_ID_LEN,
            id_retries: DEFAULT_ID_RETRIES,
            ids,
        };
        let dir = ws.image_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(ws)
    }

    pub fn with_id_len(mut self, len: usize) -> Self {
        self.id_len = len;
        self
    }

    pub fn with_id_retries(mut self, retries: usize) -> Self {
        self.id_retries = retries;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn directory(&self) -> &str {
        &self.directory
    }

    pub fn id_len(&self) -> usize {
        self.id_len
    }

    pub fn image_dir(&self) -> PathBuf {
        self.root.join(&self.directory)
    }

    pub fn id_checkpoint(&self) -> Option<IdCheckpoint> {
        self.ids.checkpoint()
    }

    /// Parse `path` as a name belonging to this workspace.
    pub fn parse(&self, path: &str) -> Result<(WorkspacePath, ParsedName), WorkspaceError> {
        let wp = WorkspacePath::parse(path)?;
        let parsed = wp.parsed(&self.directory)?;
        Ok((wp, parsed))
    }

    /// Absolute location of a workspace path. Only well-formed names resolve,
    /// so the result always lies inside the image directory.
    pub fn resolve(&self, path: &WorkspacePath) -> Result<PathBuf, WorkspaceError> {
        path.parsed(&self.directory)?;
        Ok(self.image_dir().join(path.file_name()))
    }

    pub fn exists(&self, path: &WorkspacePath) -> bool {
        self.resolve(path).map(|p| p.is_file()).unwrap_or(false)
    }

    /// Every parseable image in the workspace, sorted by rendered path.
    pub fn list_images(&self) -> Result<Vec<WorkspacePath>, WorkspaceError> {
        let (paths, _) = scan_image_dir(&self.image_dir(), &self.directory)?;
        Ok(paths)
    }

    fn known_ids(&self) -> Result<BTreeSet<FileId>, WorkspaceError> {
        Ok(self
            .list_images()?
            .iter()
            .filter_map(|p| p.parsed(&self.directory).ok())
            .map(|p| p.id().clone())
            .collect())
    }

    /// Draw a fresh id from the id source, retrying on collisions with any
    /// file already in the workspace.
    pub fn allocate_id(&mut self) -> Result<FileId, WorkspaceError> {
        let known = self.known_ids()?;
        let attempts = self.id_retries + 1;
        for _ in 0..attempts {
            let id = FileId::with_len(self.ids.next_id(self.id_len), self.id_len)?;
            if !known.contains(&id) {
                return Ok(id);
            }
        }
        Err(NameError::Collision { attempts }.into())
    }

    /// Allocate `image/{id}.{ext}` for a new upload. The sanitized `org_hint`
    /// (if any) is returned for the caller to record in the sidecar.
    pub fn new_upload_name(
        &mut self,
        org_hint: Option<&str>,
        extension: &str,
    ) -> Result<(WorkspacePath, Option<OrgToken>), WorkspaceError> {
        let ext = if IMAGE_EXTENSIONS.contains(&extension) {
            extension
        } else {
            DEFAULT_EXTENSION
        };
        let id = self.allocate_id()?;
        let path = WorkspacePath::new(&self.directory, id.as_str(), ext);
        Ok((path, org_hint.map(naming::sanitize_org)))
    }

    /// Allocate the chained output name for applying `operation` to `prev`.
    pub fn chain_name(
        &mut self,
        operation: &Slug,
        prev: &WorkspacePath,
    ) -> Result<WorkspacePath, WorkspaceError> {
        let parsed = prev.parsed(&self.directory)?;
        let upload_org = match &parsed {
            ParsedName::Upload(_) => self.read_sidecar(prev)?.and_then(|s| s.org),
            ParsedName::Chained(_) => None,
        };
        let id = self.allocate_id()?;
        let chained = naming::chain_name(operation, &parsed, id, upload_org.as_ref());
        Ok(WorkspacePath::new(
            &self.directory,
            chained.stem(),
            DEFAULT_EXTENSION,
        ))
    }

    pub fn write_file(&self, path: &WorkspacePath, bytes: &[u8]) -> Result<(), WorkspaceError> {
        let abs = self.resolve(path)?;
        fs::write(&abs, bytes).map_err(io_err(&abs))
    }

    pub fn read_file(&self, path: &WorkspacePath) -> Result<Vec<u8>, WorkspaceError> {
        let abs = self.resolve(path)?;
        if !abs.is_file() {
            return Err(WorkspaceError::Missing(path.to_string()));
        }
        fs::read(&abs).map_err(io_err(&abs))
    }

    fn sidecar_path(&self, path: &WorkspacePath) -> Result<PathBuf, WorkspaceError> {
        let abs = self.resolve(path)?;
        let mut name = abs.into_os_string();
        name.push(SIDECAR_SUFFIX);
        Ok(PathBuf::from(name))
    }

    pub fn read_sidecar(&self, path: &WorkspacePath) -> Result<Option<ImageSidecar>, WorkspaceError> {
        let p = self.sidecar_path(path)?;
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| WorkspaceError::Sidecar {
                path: path.to_string(),
                source,
            })
    }

    pub fn write_sidecar(&self, path: &WorkspacePath, sidecar: &ImageSidecar) -> Result<(), WorkspaceError> {
        let p = self.sidecar_path(path)?;
        let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
        fs::write(&p, json).map_err(io_err(&p))
    }
}

/// List image files in `dir`, split into parseable workspace paths and the
/// raw names of files that did not parse. Sidecars and non-image files are
/// ignored.
pub fn scan_image_dir(
    dir: &Path,
    directory: &str,
) -> Result<(Vec<WorkspacePath>, Vec<String>), WorkspaceError> {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        if !entry.file_type().map_err(io_err(dir))?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(SIDECAR_SUFFIX) {
            continue;
        }
        let is_image = name
            .rsplit_once('.')
            .is_some_and(|(_, ext)| IMAGE_EXTENSIONS.contains(&ext));
        if !is_image {
            continue;
        }
        let rendered = format!("{directory}/{name}");
        match WorkspacePath::parse(&rendered).and_then(|wp| wp.parsed(directory).map(|_| wp)) {
            Ok(wp) => good.push(wp),
            Err(_) => bad.push(rendered),
        }
    }
    good.sort_by_key(|p| p.to_string());
    bad.sort();
    Ok((good, bad))
}
