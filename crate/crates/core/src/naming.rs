//! Workspace file names.
//!
//! Every image the assistant can talk about lives under a single relative
//! directory (`image/` by default). Uploads get a short random id:
//!
//! ```text
//! image/o0ec.png
//! ```
//!
//! Tool outputs carry their derivation in the name, underscore delimited:
//!
//! ```text
//! image/{name}_{operation}_{prev}_{org}.png
//! image/ui3c_edge-of_o0ec_nji9dcgf.png
//! ```
//!
//! Since `_` is the field delimiter, no field may contain one. Operation
//! slugs and org tokens use hyphens instead.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIRECTORY: &str = "image";
pub const DEFAULT_EXTENSION: &str = "png";
pub const DEFAULT_ID_LEN: usize = 8;
pub const DEFAULT_ID_RETRIES: usize = 4;
pub const MAX_ORG_LEN: usize = 16;
pub const ORG_FALLBACK: &str = "img";

/// Extensions accepted on parse. Generated files are always png.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Upper bound on any single name field; keeps hostile names from growing
/// unbounded ids in the provenance graph.
const MAX_FIELD_LEN: usize = 64;

const ID_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("malformed file name {path:?}: {reason}")]
    Malformed { path: String, reason: &'static str },
    #[error("invalid file id {0:?}: expected lowercase alphanumerics")]
    InvalidId(String),
    #[error("invalid file id {id:?}: expected length {expected}")]
    IdLength { id: String, expected: usize },
    #[error("invalid operation slug {0:?}: expected [a-z0-9-]+")]
    InvalidSlug(String),
    #[error("invalid org token {0:?}: expected [a-z0-9-]+")]
    InvalidOrg(String),
    #[error("could not allocate a fresh file id after {attempts} attempts")]
    Collision { attempts: usize },
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit()
}

fn is_slug_char(c: char) -> bool {
    is_id_char(c) || c == '-'
}

fn check_field(s: &str, ok: fn(char) -> bool) -> bool {
    !s.is_empty() && s.len() <= MAX_FIELD_LEN && s.chars().all(ok)
}

/// Short lowercase alphanumeric identifier; the leading field of every name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FileId(String);

impl FileId {
    pub fn new(value: impl Into<String>) -> Result<Self, NameError> {
        let value = value.into();
        if check_field(&value, is_id_char) {
            Ok(Self(value))
        } else {
            Err(NameError::InvalidId(value))
        }
    }

    /// Like [`FileId::new`] but also pins the length, as required for freshly
    /// generated ids.
    pub fn with_len(value: impl Into<String>, len: usize) -> Result<Self, NameError> {
        let id = Self::new(value)?;
        if id.0.len() != len {
            return Err(NameError::IdLength {
                id: id.0,
                expected: len,
            });
        }
        Ok(id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for FileId {
    type Error = NameError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<FileId> for String {
    fn from(id: FileId) -> Self {
        id.0
    }
}

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Operation slug, e.g. `edge-of` or `depth2image`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Slug(String);

impl Slug {
    pub fn new(value: impl Into<String>) -> Result<Self, NameError> {
        let value = value.into();
        if check_field(&value, is_slug_char) {
            Ok(Self(value))
        } else {
            Err(NameError::InvalidSlug(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Slug {
    type Error = NameError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Slug> for String {
    fn from(s: Slug) -> Self {
        s.0
    }
}

impl fmt::Display for Slug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Token naming the upload a derivation chain started from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OrgToken(String);

impl OrgToken {
    pub fn new(value: impl Into<String>) -> Result<Self, NameError> {
        let value = value.into();
        if check_field(&value, is_slug_char) {
            Ok(Self(value))
        } else {
            Err(NameError::InvalidOrg(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&FileId> for OrgToken {
    fn from(id: &FileId) -> Self {
        Self(id.0.clone())
    }
}

impl TryFrom<String> for OrgToken {
    type Error = NameError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<OrgToken> for String {
    fn from(s: OrgToken) -> Self {
        s.0
    }
}

impl fmt::Display for OrgToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Turn an arbitrary user file name (or stem) into an org token.
///
/// Keeps the last path component without its extension, lowercases, maps
/// `_` and spaces to `-`, drops anything outside `[a-z0-9-]`, and keeps at
/// most 16 characters. An empty result
/// falls back to `"img"`.
pub fn sanitize_org(raw: &str) -> OrgToken {
    let base = raw.rsplit(['/', '\\']).next().unwrap_or(raw);
    let stem = match base.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem,
        _ => base,
    };
    let mut out = String::new();
    for c in stem.chars().flat_map(char::to_lowercase) {
        let mapped = match c {
            '_' | ' ' => '-',
            c if is_slug_char(c) => c,
            _ => continue,
        };
        out.push(mapped);
        if out.len() == MAX_ORG_LEN {
            break;
        }
    }
    // "___" maps to "---", which carries no information.
    if out.chars().all(|c| c == '-') {
        out = ORG_FALLBACK.to_string();
    }
    OrgToken(out)
}

/// A relative path `{directory}/{stem}.{extension}` inside a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkspacePath {
    directory: String,
    stem: String,
    extension: String,
}

impl WorkspacePath {
    pub fn new(
        directory: impl Into<String>,
        stem: impl Into<String>,
        extension: impl Into<String>,
    ) -> Self {
        Self {
            directory: directory.into(),
            stem: stem.into(),
            extension: extension.into(),
        }
    }

    /// Split a rendered path. Only single-segment relative directories are
    /// accepted, so a parsed path can never escape the workspace.
    pub fn parse(path: &str) -> Result<Self, NameError> {
        let malformed = |reason| NameError::Malformed {
            path: path.to_string(),
            reason,
        };
        if path.contains('\\') {
            return Err(malformed("backslash in path"));
        }
        let (directory, file) = path
            .split_once('/')
            .ok_or_else(|| malformed("missing directory prefix"))?;
        if directory.is_empty() || directory == "." || directory == ".." {
            return Err(malformed("directory must be a relative name"));
        }
        if file.contains('/') {
            return Err(malformed("nested directories are not allowed"));
        }
        let (stem, extension) = file
            .rsplit_once('.')
            .ok_or_else(|| malformed("missing extension"))?;
        if stem.is_empty() || extension.is_empty() {
            return Err(malformed("empty stem or extension"));
        }
        Ok(Self::new(directory, stem, extension))
    }

    pub fn directory(&self) -> &str {
        &self.directory
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn extension(&self) -> &str {
        &self.extension
    }

    pub fn file_name(&self) -> String {
        format!("{}.{}", self.stem, self.extension)
    }
}

impl fmt::Display for WorkspacePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}.{}", self.directory, self.stem, self.extension)
    }
}

impl Serialize for WorkspacePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WorkspacePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        WorkspacePath::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Provenance record decoded from a derived file's stem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainedName {
    pub name: FileId,
    pub operation: Slug,
    pub prev: FileId,
    pub org: OrgToken,
}

impl ChainedName {
    pub fn stem(&self) -> String {
        format!("{}_{}_{}_{}", self.name, self.operation, self.prev, self.org)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UploadName {
    pub id: FileId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ParsedName {
    Upload(UploadName),
    Chained(ChainedName),
}

impl ParsedName {
    /// The file's own id (first field).
    pub fn id(&self) -> &FileId {
        match self {
            ParsedName::Upload(u) => &u.id,
            ParsedName::Chained(c) => &c.name,
        }
    }
}

/// Parse a path under the default `image/` directory.
pub fn parse_name(path: &str) -> Result<ParsedName, NameError> {
    parse_name_in(path, DEFAULT_DIRECTORY)
}

/// Total parser for workspace file names: every input yields either a
/// parsed name or a [`NameError::Malformed`].
pub fn parse_name_in(path: &str, directory: &str) -> Result<ParsedName, NameError> {
    let wp = WorkspacePath::parse(path)?;
    parse_workspace_path(&wp, directory).map_err(|reason| NameError::Malformed {
        path: path.to_string(),
        reason,
    })
}

fn parse_workspace_path(wp: &WorkspacePath, directory: &str) -> Result<ParsedName, &'static str> {
    if wp.directory() != directory {
        return Err("outside the workspace directory");
    }
    if !IMAGE_EXTENSIONS.contains(&wp.extension()) {
        return Err("unsupported extension");
    }
    let fields: Vec<&str> = wp.stem().split('_').collect();
    match fields.as_slice() {
        [id] => Ok(ParsedName::Upload(UploadName {
            id: FileId::new(*id).map_err(|_| "invalid id")?,
        })),
        [name, operation, prev, org] => Ok(ParsedName::Chained(ChainedName {
            name: FileId::new(*name).map_err(|_| "invalid name field")?,
            operation: Slug::new(*operation).map_err(|_| "invalid operation field")?,
            prev: FileId::new(*prev).map_err(|_| "invalid prev field")?,
            org: OrgToken::new(*org).map_err(|_| "invalid org field")?,
        })),
        _ => Err("expected 0 or 3 underscores"),
    }
}

impl WorkspacePath {
    pub fn parsed(&self, directory: &str) -> Result<ParsedName, NameError> {
        parse_workspace_path(self, directory).map_err(|reason| NameError::Malformed {
            path: self.to_string(),
            reason,
        })
    }
}

/// Derive the name of a tool output from its input.
///
/// For an upload input the org token is `upload_org` when one was recorded
/// at upload time, otherwise the upload's own id. Chained inputs propagate
/// their org unchanged.
pub fn chain_name(
    operation: &Slug,
    prev: &ParsedName,
    new_id: FileId,
    upload_org: Option<&OrgToken>,
) -> ChainedName {
    let (prev_id, org) = match prev {
        ParsedName::Upload(u) => (
            u.id.clone(),
            upload_org.cloned().unwrap_or_else(|| OrgToken::from(&u.id)),
        ),
        ParsedName::Chained(c) => (c.name.clone(), c.org.clone()),
    };
    ChainedName {
        name: new_id,
        operation: operation.clone(),
        prev: prev_id,
        org,
    }
}

/// Source of candidate file ids. Candidates are validated by the caller.
pub trait IdSource: Send {
    fn next_id(&mut self, len: usize) -> String;

    /// Opaque position for resuming a deterministic source, when supported.
    fn checkpoint(&self) -> Option<IdCheckpoint> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCheckpoint {
    pub seed: u64,
    /// ChaCha word position; serialized as a string because it is a u128.
    #[serde(with = "u128_str")]
    pub position: u128,
}

mod u128_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Base-36 ids from a seeded ChaCha stream; resumable from a checkpoint.
pub struct SeededIds {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn resume(checkpoint: IdCheckpoint) -> Self {
        let mut ids = Self::new(checkpoint.seed);
        ids.rng.set_word_pos(checkpoint.position);
        ids
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl IdSource for SeededIds {
    fn next_id(&mut self, len: usize) -> String {
        (0..len)
            .map(|_| ID_ALPHABET[self.rng.random_range(0..ID_ALPHABET.len())] as char)
            .collect()
    }

    fn checkpoint(&self) -> Option<IdCheckpoint> {
        Some(IdCheckpoint {
            seed: self.seed,
            position: self.rng.get_word_pos(),
        })
    }
}

/// Yields a fixed list of ids, then keeps repeating the last one.
#[derive(Debug, Clone, Default)]
pub struct FixedIds {
    queue: VecDeque<String>,
    last: String,
}

impl FixedIds {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: ids.into_iter().map(Into::into).collect(),
            last: String::new(),
        }
    }
}

impl IdSource for FixedIds {
    fn next_id(&mut self, _len: usize) -> String {
        if let Some(id) = self.queue.pop_front() {
            self.last = id;
        }
        self.last.clone()
    }
}
