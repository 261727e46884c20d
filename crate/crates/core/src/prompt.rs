//! Prompt assembly.
//!
//! A step prompt is the concatenation, in order, of:
//!
//! 1. the system principles (`prefix`),
//! 2. one block per enabled tool,
//! 3. the reasoning format instructions with the tool names spliced in,
//! 4. the dialogue history, truncated to the token budget,
//! 5. the user query followed by the force-thinking suffix,
//! 6. the reasoning trace of the current round.
//!
//! The default texts live in `data/prompts/` and can be replaced by
//! pointing [`PromptSet::load_dir`] at another directory.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ReasoningTrace;
use crate::naming::WorkspacePath;
use crate::registry::Registry;

/// Every step prompt ends with a line starting with this text.
pub const FORCE_THINKING_MARKER: &str = "Thought: Do I need to use a tool?";
pub const TOOL_NAMES_PLACEHOLDER: &str = "{tool_names}";
pub const DEFAULT_MAX_HISTORY_TOKENS: usize = 2000;
pub const DEFAULT_ESTIMATOR: &str = "chars4";

pub const HISTORY_HEADER: &str = "Previous conversation history:";
pub const QUERY_LABEL: &str = "New input: ";

const BUILTIN_PREFIX: &str = include_str!("../data/prompts/prefix.txt");
const BUILTIN_FORMAT: &str = include_str!("../data/prompts/format_instructions.txt");
const BUILTIN_SUFFIX: &str = include_str!("../data/prompts/suffix.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("suffix must end with {FORCE_THINKING_MARKER:?}")]
    SuffixMarker,
    #[error("format instructions must contain {TOOL_NAMES_PLACEHOLDER} exactly once")]
    ToolNamesPlaceholder,
    #[error("cannot read prompt file {path}: {message}")]
    Io { path: String, message: String },
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("unknown token estimator {0:?}")]
    UnknownEstimator(String),
}

/// The fixed texts: system principles, format instructions and the
/// force-thinking suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    prefix: String,
    format_instructions: String,
    suffix: String,
}

impl PromptSet {
    pub fn new(
        prefix: impl Into<String>,
        format_instructions: impl Into<String>,
        suffix: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let set = Self {
            prefix: prefix.into().trim_end().to_string(),
            format_instructions: format_instructions.into().trim_end().to_string(),
            suffix: suffix.into().trim_end().to_string(),
        };
        if !set.suffix.ends_with(FORCE_THINKING_MARKER) {
            return Err(PromptError::SuffixMarker);
        }
        if set.format_instructions.matches(TOOL_NAMES_PLACEHOLDER).count() != 1 {
            return Err(PromptError::ToolNamesPlaceholder);
        }
        Ok(set)
    }

    pub fn builtin() -> Self {
        Self::new(BUILTIN_PREFIX, BUILTIN_FORMAT, BUILTIN_SUFFIX).expect("built-in prompts are valid")
    }

    /// Load `prefix.txt`, `format_instructions.txt` and `suffix.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        Self::new(
            read("prefix.txt")?,
            read("format_instructions.txt")?,
            read("suffix.txt")?,
        )
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    pub fn format_instructions_template(&self) -> &str {
        &self.format_instructions
    }

    /// Format instructions naming each enabled tool once.
    pub fn format_instructions(&self, registry: &Registry) -> String {
        self.format_instructions
            .replace(TOOL_NAMES_PLACEHOLDER, &registry.enabled_names().join(", "))
    }
}

pub trait TokenEstimator: Send + Sync {
    fn id(&self) -> &'static str;
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`.
pub struct CharsPerFour;

impl TokenEstimator for CharsPerFour {
    fn id(&self) -> &'static str {
        "chars4"
    }

    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

/// Whitespace separated words.
pub struct Words;

impl TokenEstimator for Words {
    fn id(&self) -> &'static str {
        "words"
    }

    fn estimate(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn estimator_by_id(id: &str) -> Option<&'static dyn TokenEstimator> {
    match id {
        "chars4" => Some(&CharsPerFour),
        "words" => Some(&Words),
        _ => None,
    }
}

/// Default estimator.
pub fn estimate_tokens(text: &str) -> usize {
    CharsPerFour.estimate(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_history_tokens: usize,
    pub estimator: String,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            max_history_tokens: DEFAULT_MAX_HISTORY_TOKENS,
            estimator: DEFAULT_ESTIMATOR.to_string(),
        }
    }
}

impl TokenBudget {
    pub fn new(max_history_tokens: usize, estimator: &str) -> Result<Self, PromptError> {
        if max_history_tokens == 0 {
            return Err(PromptError::ZeroBudget);
        }
        if estimator_by_id(estimator).is_none() {
            return Err(PromptError::UnknownEstimator(estimator.to_string()));
        }
        Ok(Self {
            max_history_tokens,
            estimator: estimator.to_string(),
        })
    }

    fn estimator(&self) -> &'static dyn TokenEstimator {
        estimator_by_id(&self.estimator).unwrap_or(&CharsPerFour)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    /// Estimate for [`QaPair::render`] under the history's estimator.
    pub tokens: usize,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>, est: &dyn TokenEstimator) -> Self {
        let mut pair = Self {
            question: question.into(),
            answer: answer.into(),
            tokens: 0,
        };
        pair.tokens = est.estimate(&pair.render());
        pair
    }

    pub fn render(&self) -> String {
        format!("Human: {}\nAI: {}\n", self.question, self.answer)
    }
}

/// Question/answer pairs of earlier rounds, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueHistory {
    estimator: String,
    pairs: Vec<QaPair>,
}

impl Default for DialogueHistory {
    fn default() -> Self {
        Self::new(DEFAULT_ESTIMATOR)
    }
}

impl DialogueHistory {
    pub fn new(estimator: &str) -> Self {
        Self {
            estimator: estimator.to_string(),
            pairs: Vec::new(),
        }
    }

    pub fn from_pairs(estimator: &str, pairs: Vec<QaPair>) -> Self {
        Self {
            estimator: estimator.to_string(),
            pairs,
        }
    }

    pub fn push(&mut self, question: impl Into<String>, answer: impl Into<String>) {
        let est = estimator_by_id(&self.estimator).unwrap_or(&CharsPerFour);
        self.pairs.push(QaPair::new(question, answer, est));
    }

    pub fn push_pair(&mut self, (question, answer): (String, String)) {
        self.push(question, answer);
    }

    pub fn pairs(&self) -> &[QaPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn render(&self) -> String {
        self.pairs.iter().map(QaPair::render).collect()
    }

    pub fn estimator_id(&self) -> &str {
        &self.estimator
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetOverflow {
    pub tokens: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub history: DialogueHistory,
    pub dropped: usize,
    /// Set when the newest pair alone exceeds the budget; it is kept anyway.
    pub overflow: Option<BudgetOverflow>,
}

/// Drop whole pairs, oldest first, until the rest fits the budget.
pub fn truncate_history(history: &DialogueHistory, budget: &TokenBudget) -> Truncation {
    let est = budget.estimator();
    let cost = |p: &QaPair| {
        if history.estimator == budget.estimator {
            p.tokens
        } else {
            est.estimate(&p.render())
        }
    };

    let mut kept = 0;
    let mut total = 0usize;
    for pair in history.pairs.iter().rev() {
        let c = cost(pair);
        if total + c > budget.max_history_tokens {
            break;
        }
        total += c;
        kept += 1;
    }

    let mut overflow = None;
    if kept == 0 {
        if let Some(last) = history.pairs.last() {
            kept = 1;
            overflow = Some(BudgetOverflow {
                tokens: cost(last),
                budget: budget.max_history_tokens,
            });
        }
    }
    let start = history.pairs.len() - kept;
    Truncation {
        history: DialogueHistory {
            estimator: history.estimator.clone(),
            pairs: history.pairs[start..].to_vec(),
        },
        dropped: start,
        overflow,
    }
}

/// History pair announcing an upload. Only the file name ever reaches the
/// model; the image bytes never do.
pub fn render_upload_event(path: &WorkspacePath) -> (String, String) {
    (
        format!("Provide an image named {path}."),
        "Received.".to_string(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserQuery {
    pub text: String,
    pub attached_image: Option<WorkspacePath>,
}

impl UserQuery {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            attached_image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedQuery {
    pub text: String,
    pub warning: Option<String>,
}

/// `{query}\n{suffix}`. An existing copy of the suffix inside the query is
/// removed first, so wrapping twice is the same as wrapping once.
pub fn wrap_user_query(query: &UserQuery, prompts: &PromptSet) -> WrappedQuery {
    let suffix = prompts.suffix();
    let mut text = query.text.clone();
    while text.contains(suffix) {
        text = text.replace(suffix, "");
    }
    let text = text.trim_end();
    if text.trim().is_empty() {
        return WrappedQuery {
            text: suffix.to_string(),
            warning: Some("empty user query".to_string()),
        };
    }
    WrappedQuery {
        text: format!("{text}\n{suffix}"),
        warning: None,
    }
}

/// Render the current round's trace. Each step continues the open
/// `Thought:` line and ends by opening a new one.
pub fn render_trace(trace: &ReasoningTrace) -> String {
    let mut out = String::new();
    for step in trace.steps() {
        if !step.call.thought.is_empty() {
            out.push(' ');
            out.push_str(&step.call.thought);
        }
        let _ = write!(
            out,
            "\nAction: {}\nAction Input: {}\nObservation: {}\n{}",
            step.call.tool_name, step.call.tool_input, step.observation, FORCE_THINKING_MARKER
        );
    }
    out
}

/// Byte offsets of each section in an assembled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionOffsets {
    pub prefix: usize,
    pub tools: usize,
    pub instructions: usize,
    pub history: usize,
    pub query: usize,
    pub trace: usize,
}

pub fn assemble(
    prompts: &PromptSet,
    registry: &Registry,
    history: &DialogueHistory,
    query: &WrappedQuery,
    trace: &ReasoningTrace,
) -> String {
    assemble_with_offsets(prompts, registry, history, query, trace).0
}

pub fn assemble_with_offsets(
    prompts: &PromptSet,
    registry: &Registry,
    history: &DialogueHistory,
    query: &WrappedQuery,
    trace: &ReasoningTrace,
) -> (String, SectionOffsets) {
    let mut out = String::new();
    let prefix = out.len();
    out.push_str(prompts.prefix());
    out.push_str("\n\n");
    let tools = out.len();
    out.push_str(&registry.render_tools_section());
    out.push_str("\n\n");
    let instructions = out.len();
    out.push_str(&prompts.format_instructions(registry));
    out.push_str("\n\n");
    let history_at = out.len();
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    out.push_str(&history.render());
    out.push('\n');
    out.push_str(QUERY_LABEL);
    let query_at = out.len();
    out.push_str(&query.text);
    let trace_at = out.len();
    out.push_str(&render_trace(trace));
    (
        out,
        SectionOffsets {
            prefix,
            tools,
            instructions,
            history: history_at,
            query: query_at,
            trace: trace_at,
        },
    )
}
