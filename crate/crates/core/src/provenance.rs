//! Derivation graph reconstructed purely from workspace file names.

use std::collections::BTreeMap;

use petgraph::algo::is_cyclic_directed;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

use crate::naming::{ParsedName, WorkspacePath, DEFAULT_DIRECTORY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Upload,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceNode {
    pub id: String,
    pub path: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEdge {
    pub from: String,
    pub to: String,
    pub operation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diagnostic {
    /// Path that does not parse as a workspace name.
    Unparsed { path: String, reason: String },
    /// Edge source id with no file in the set.
    Dangling { id: String },
    /// Two files share a leading id; the later one is not added as a node.
    DuplicateId { id: String, path: String },
    /// The edges contain a cycle, which honest naming cannot produce.
    Cycle,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceGraph {
    pub nodes: Vec<ProvenanceNode>,
    pub edges: Vec<ProvenanceEdge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

impl ProvenanceGraph {
    pub fn node(&self, id: &str) -> Option<&ProvenanceNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Incoming edge of a derived node.
    pub fn parent_edge(&self, id: &str) -> Option<&ProvenanceEdge> {
        self.edges.iter().find(|e| e.to == id)
    }

    /// Operation slugs from the chain root down to `id`.
    pub fn operations_to(&self, id: &str) -> Vec<String> {
        let mut ops = Vec::new();
        let mut cursor = id.to_string();
        // Bounded by edge count so a corrupt cyclic graph cannot loop forever.
        for _ in 0..=self.edges.len() {
            match self.parent_edge(&cursor) {
                Some(e) => {
                    ops.push(e.operation.clone());
                    cursor = e.from.clone();
                }
                None => break,
            }
        }
        ops.reverse();
        ops
    }

    pub fn is_acyclic(&self) -> bool {
        !self.diagnostics.contains(&Diagnostic::Cycle)
    }
}

/// Build the graph for paths under the default `image/` directory.
pub fn build_provenance<'a, I>(paths: I) -> ProvenanceGraph
where
    I: IntoIterator<Item = &'a str>,
{
    build_provenance_in(paths, DEFAULT_DIRECTORY)
}

pub fn build_provenance_in<'a, I>(paths: I, directory: &str) -> ProvenanceGraph
where
    I: IntoIterator<Item = &'a str>,
{
    let mut graph = ProvenanceGraph::default();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();

    let mut parsed: Vec<(String, ParsedName)> = Vec::new();
    for path in paths {
        match WorkspacePath::parse(path).and_then(|wp| wp.parsed(directory)) {
            Ok(name) => parsed.push((path.to_string(), name)),
            Err(e) => graph.diagnostics.push(Diagnostic::Unparsed {
                path: path.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    parsed.sort_by(|a, b| a.0.cmp(&b.0));

    for (path, name) in &parsed {
        let id = name.id().to_string();
        if seen.insert(id.clone(), ()).is_some() {
            graph.diagnostics.push(Diagnostic::DuplicateId {
                id,
                path: path.clone(),
            });
            continue;
        }
        let kind = match name {
            ParsedName::Upload(_) => NodeKind::Upload,
            ParsedName::Chained(c) => {
                graph.edges.push(ProvenanceEdge {
                    from: c.prev.to_string(),
                    to: id.clone(),
                    operation: c.operation.to_string(),
                });
                NodeKind::Derived
            }
        };
        graph.nodes.push(ProvenanceNode {
            id,
            path: path.clone(),
            kind,
        });
    }

    for edge in &graph.edges {
        if !seen.contains_key(&edge.from) {
            graph.diagnostics.push(Diagnostic::Dangling {
                id: edge.from.clone(),
            });
        }
    }

    let mut g: DiGraphMap<&str, ()> = DiGraphMap::new();
    for e in &graph.edges {
        g.add_edge(e.from.as_str(), e.to.as_str(), ());
    }
    if is_cyclic_directed(&g) {
        graph.diagnostics.push(Diagnostic::Cycle);
    }
    graph
}
