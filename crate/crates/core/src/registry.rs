//! Declarative tool catalog and its prompt rendering.
//!
//! The built-in catalog is data (`data/catalog.tools`), compiled in as the
//! default and replaceable at runtime with [`Registry::load`].

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{self, KvError};
use crate::naming::Slug;

const BUILTIN_CATALOG: &str = include_str!("../data/catalog.tools");

/// Shown in place of the tool list when nothing is enabled.
pub const NO_TOOLS_WARNING: &str =
    "(No tools are enabled for this conversation. Answer without using any tool.)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldRole {
    ImagePath,
    Text,
}

impl FieldRole {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "image-path" => Some(Self::ImagePath),
            "text" => Some(Self::Text),
            _ => None,
        }
    }
}

impl fmt::Display for FieldRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ImagePath => "image-path",
            Self::Text => "text",
        })
    }
}

pub type OutputKind = FieldRole;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub usage_prompt: String,
    pub input_roles: Vec<FieldRole>,
    pub output_kind: OutputKind,
    /// Present exactly for image-producing tools.
    pub operation_slug: Option<Slug>,
    pub example_prompt: Option<String>,
}

impl ToolSpec {
    pub fn input_arity(&self) -> usize {
        self.input_roles.len()
    }

    pub fn produces_image(&self) -> bool {
        self.output_kind == OutputKind::ImagePath
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error(transparent)]
    Syntax(#[from] KvError),
    #[error("tool at line {line}: missing key `{key}`")]
    MissingKey { line: usize, key: &'static str },
    #[error("tool {name:?}: {message}")]
    Invalid { name: String, message: String },
    #[error("duplicate tool name {0:?}")]
    DuplicateName(String),
    #[error("duplicate operation slug {0:?}")]
    DuplicateSlug(String),
    #[error("cannot read catalog {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LookupError {
    #[error("unknown-tool: {0:?} is not a known tool")]
    Unknown(String),
    #[error("disabled-tool: {0:?} is not enabled in this conversation")]
    Disabled(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("arity-mismatch: expected {expected} comma separated fields, got {got}")]
pub struct ArityMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Ordered tool catalog plus the subset enabled for a conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    specs: Vec<ToolSpec>,
    enabled: BTreeSet<String>,
}

fn parse_spec(doc: &kv::Document) -> Result<ToolSpec, CatalogError> {
    let line = doc.first().map(|e| e.line).unwrap_or(0);
    let req = |key: &'static str| kv::get(doc, key).ok_or(CatalogError::MissingKey { line, key });
    let name = req("name")?.to_string();
    let invalid = |message: String| CatalogError::Invalid {
        name: name.clone(),
        message,
    };

    let usage_prompt = req("usage")?.to_string();
    let arity: usize = req("arity")?
        .parse()
        .map_err(|_| invalid("arity is not a number".into()))?;
    let input_roles = req("roles")?
        .split(',')
        .map(|r| FieldRole::parse(r.trim()).ok_or_else(|| invalid(format!("unknown role {r:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let output_kind = FieldRole::parse(req("output")?)
        .ok_or_else(|| invalid("unknown output kind".into()))?;
    let operation_slug = kv::get(doc, "slug")
        .map(|s| Slug::new(s).map_err(|e| invalid(e.to_string())))
        .transpose()?;
    let example_prompt = kv::get(doc, "example").map(str::to_string);

    if name.is_empty() || usage_prompt.is_empty() {
        return Err(invalid("name and usage must be nonempty".into()));
    }
    if !(1..=3).contains(&arity) {
        return Err(invalid(format!("arity {arity} outside 1..=3")));
    }
    if input_roles.len() != arity {
        return Err(invalid(format!(
            "{} roles declared for arity {arity}",
            input_roles.len()
        )));
    }
    match (output_kind, &operation_slug) {
        (OutputKind::ImagePath, None) => {
            return Err(invalid("image-producing tools need a slug".into()))
        }
        (OutputKind::Text, Some(_)) => return Err(invalid("text tools take no slug".into())),
        _ => {}
    }
    Ok(ToolSpec {
        name,
        usage_prompt,
        input_roles,
        output_kind,
        operation_slug,
        example_prompt,
    })
}

impl Registry {
    /// Build a registry with every spec enabled.
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, CatalogError> {
        let mut names = BTreeSet::new();
        let mut slugs = BTreeSet::new();
        for s in &specs {
            if !names.insert(s.name.clone()) {
                return Err(CatalogError::DuplicateName(s.name.clone()));
            }
            if let Some(slug) = &s.operation_slug {
                if !slugs.insert(slug.clone()) {
                    return Err(CatalogError::DuplicateSlug(slug.to_string()));
                }
            }
        }
        Ok(Self {
            specs,
            enabled: names,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let specs = kv::parse_documents(text, ':')?
            .iter()
            .map(parse_spec)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(specs)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Restrict to `names`, which must all be declared.
    pub fn with_enabled<I, S>(&self, names: I) -> Result<Self, LookupError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut enabled = BTreeSet::new();
        for n in names {
            let n = n.as_ref().trim();
            if !self.specs.iter().any(|s| s.name == n) {
                return Err(LookupError::Unknown(n.to_string()));
            }
            enabled.insert(n.to_string());
        }
        Ok(Self {
            specs: self.specs.clone(),
            enabled,
        })
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn is_enabled(&self, name: &str) -> bool {
        self.enabled.contains(name)
    }

    /// Enabled specs in declaration order.
    pub fn enabled_specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.specs.iter().filter(|s| self.enabled.contains(&s.name))
    }

    pub fn enabled_names(&self) -> Vec<&str> {
        self.enabled_specs().map(|s| s.name.as_str()).collect()
    }

    /// Case-sensitive lookup after trimming surrounding whitespace.
    pub fn lookup(&self, name: &str) -> Result<&ToolSpec, LookupError> {
        let name = name.trim();
        let spec = self
            .specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| LookupError::Unknown(name.to_string()))?;
        if !self.enabled.contains(name) {
            return Err(LookupError::Disabled(name.to_string()));
        }
        Ok(spec)
    }

    /// The tool section of the prompt: one block per enabled tool.
    pub fn render_tools_section(&self) -> String {
        let blocks: Vec<String> = self.enabled_specs().map(render_tool_block).collect();
        if blocks.is_empty() {
            NO_TOOLS_WARNING.to_string()
        } else {
            blocks.join("\n")
        }
    }
}

/// The compiled-in catalog of 22 tools.
pub fn builtin_catalog() -> Registry {
    Registry::parse(BUILTIN_CATALOG).expect("built-in catalog is valid")
}

/// `{name}: {usage}`. Usage texts that already open with their own label
/// (`Edge Detection On Image : useful for ...`) are emitted unchanged.
pub fn render_tool_block(spec: &ToolSpec) -> String {
    let mut block = if carries_label(&spec.usage_prompt) {
        spec.usage_prompt.clone()
    } else {
        format!("{}: {}", spec.name, spec.usage_prompt)
    };
    if let Some(example) = &spec.example_prompt {
        block.push_str(" Example: ");
        block.push_str(example);
    }
    block
}

fn carries_label(usage: &str) -> bool {
    match usage.find(": useful") {
        Some(idx) => idx > 0 && !usage[..idx].contains(':'),
        None => false,
    }
}

/// Split a raw `Action Input` into `arity` fields on the first `arity - 1`
/// commas, so the last field may itself contain commas.
pub fn split_tool_input(raw: &str, arity: usize) -> Result<Vec<String>, ArityMismatch> {
    if arity <= 1 {
        return Ok(vec![raw.trim().to_string()]);
    }
    let fields: Vec<String> = raw.splitn(arity, ',').map(|f| f.trim().to_string()).collect();
    if fields.len() < arity {
        return Err(ArityMismatch {
            expected: arity,
            got: fields.len(),
        });
    }
    Ok(fields)
}

/// Stable file name for a tool's golden render: `{NN}-{kebab name}.txt`.
pub fn golden_file_name(index: usize, spec: &ToolSpec) -> String {
    let mut kebab = String::new();
    for c in spec.name.chars() {
        if c.is_ascii_alphanumeric() {
            kebab.push(c.to_ascii_lowercase());
        } else if !kebab.ends_with('-') {
            kebab.push('-');
        }
    }
    format!("{:02}-{}.txt", index + 1, kebab.trim_matches('-'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_22_tools() {
        let reg = builtin_catalog();
        assert_eq!(reg.len(), 22);
        assert_eq!(reg.enabled_specs().count(), 22);
    }

    #[test]
    fn arities_follow_inout_lines() {
        let reg = builtin_catalog();
        let replace = reg.lookup("Replace Something From The Photo").unwrap();
        assert_eq!(replace.input_arity(), 3);
        let describe = reg.lookup("Get Photo Description").unwrap();
        assert_eq!(describe.input_arity(), 1);
        assert_eq!(describe.output_kind, OutputKind::Text);
        assert!(describe.operation_slug.is_none());
        let vqa = reg.lookup("Answer Question About The Image").unwrap();
        assert_eq!(vqa.input_roles, vec![FieldRole::ImagePath, FieldRole::Text]);
    }

    #[test]
    fn image_tools_have_distinct_slugs() {
        let reg = builtin_catalog();
        let slugs: BTreeSet<_> = reg
            .specs()
            .iter()
            .filter(|s| s.produces_image())
            .map(|s| s.operation_slug.clone().unwrap())
            .collect();
        assert_eq!(slugs.len(), 20);
        let edge = reg.lookup("Edge Detection On Image").unwrap();
        assert_eq!(edge.operation_slug.as_ref().unwrap().as_str(), "edge-of");
    }

    #[test]
    fn lookup_trims_but_is_case_sensitive() {
        let reg = builtin_catalog();
        assert_eq!(
            reg.lookup("Edge Detection On Image ").unwrap().name,
            "Edge Detection On Image"
        );
        assert_eq!(
            reg.lookup("edge detection on image"),
            Err(LookupError::Unknown("edge detection on image".into()))
        );
    }

    #[test]
    fn disabled_is_distinct_from_unknown() {
        let reg = builtin_catalog()
            .with_enabled(["Get Photo Description"])
            .unwrap();
        assert!(matches!(
            reg.lookup("Edge Detection On Image"),
            Err(LookupError::Disabled(_))
        ));
        assert!(reg.lookup("Get Photo Description").is_ok());
        assert!(matches!(
            builtin_catalog().with_enabled(["Nope"]),
            Err(LookupError::Unknown(n)) if n == "Nope"
        ));
    }

    #[test]
    fn edge_block_rendering() {
        let reg = builtin_catalog();
        let block = render_tool_block(reg.lookup("Edge Detection On Image").unwrap());
        assert!(block.starts_with(
            "Edge Detection On Image : useful for when you want to detect the edge of the image."
        ));
        let vqa = render_tool_block(reg.lookup("Answer Question About The Image").unwrap());
        assert!(vqa.starts_with("Answer Question About The Image: useful when"));
    }

    #[test]
    fn empty_enabled_set_renders_warning() {
        let reg = builtin_catalog().with_enabled(Vec::<&str>::new()).unwrap();
        assert_eq!(reg.render_tools_section(), NO_TOOLS_WARNING);
    }

    #[test]
    fn subset_renders_in_declaration_order() {
        let reg = builtin_catalog()
            .with_enabled([
                "Pose Detection On Image",
                "Get Photo Description",
                "Edge Detection On Image",
            ])
            .unwrap();
        assert_eq!(
            reg.enabled_names(),
            vec![
                "Get Photo Description",
                "Edge Detection On Image",
                "Pose Detection On Image"
            ]
        );
        assert_eq!(reg.render_tools_section().lines().count(), 3);
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            split_tool_input("image/o0ec.png, the red car, a blue bus", 3).unwrap(),
            vec!["image/o0ec.png", "the red car", "a blue bus"]
        );
        assert_eq!(
            split_tool_input("image/o0ec.png, make it look like a painting, please", 2).unwrap(),
            vec!["image/o0ec.png", "make it look like a painting, please"]
        );
        assert_eq!(
            split_tool_input("image/o0ec.png", 2),
            Err(ArityMismatch {
                expected: 2,
                got: 1
            })
        );
        assert_eq!(split_tool_input("  a, b  ", 1).unwrap(), vec!["a, b"]);
    }

    #[test]
    fn catalog_validation_errors() {
        let bad_arity = "name: T\narity: 2\nroles: text\noutput: text\nusage: u\n";
        assert!(matches!(Registry::parse(bad_arity), Err(CatalogError::Invalid { .. })));
        let no_slug = "name: T\narity: 1\nroles: text\noutput: image-path\nusage: u\n";
        assert!(matches!(Registry::parse(no_slug), Err(CatalogError::Invalid { .. })));
        let dup = "name: T\narity: 1\nroles: text\noutput: text\nusage: u\n\nname: T\narity: 1\nroles: text\noutput: text\nusage: v\n";
        assert_eq!(Registry::parse(dup), Err(CatalogError::DuplicateName("T".into())));
        let missing = "name: T\narity: 1\n";
        assert!(matches!(Registry::parse(missing), Err(CatalogError::MissingKey { .. })));
    }

    #[test]
    fn golden_file_names() {
        let reg = builtin_catalog();
        assert_eq!(
            golden_file_name(6, &reg.specs()[6]),
            "07-edge-detection-on-image.txt"
        );
    }
}
