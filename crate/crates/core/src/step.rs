//! Parser for one model completion.
//!
//! The prompt always ends with an open `Thought: Do I need to use a tool?`
//! line, so a completion continues it. Two shapes are accepted:
//!
//! ```text
//!  Yes
//! Action: Edge Detection On Image
//! Action Input: image/o0ec.png
//! ```
//!
//! ```text
//!  No
//! AI: here is the edge map: image/ui3c_edge-of_o0ec_o0ec.png
//! ```
//!
//! Anything else is a [`FormatErrorKind`], never a panic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::ToolInvocation;

const ACTION: &str = "Action:";
const ACTION_INPUT: &str = "Action Input:";
const ANSWER: &str = "AI:";
const OBSERVATION: &str = "\nObservation:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatErrorKind {
    /// `Action:` without a following `Action Input:` line (or an empty one).
    MissingActionInput,
    /// `Action:` present but naming nothing.
    EmptyAction,
    /// Neither a tool call nor a `No` / `AI:` answer.
    NoTerminalMarker,
    BothActionAndAnswer,
    Empty,
}

impl FormatErrorKind {
    pub fn token(self) -> &'static str {
        match self {
            Self::MissingActionInput => "missing-action-input",
            Self::EmptyAction => "empty-action",
            Self::NoTerminalMarker => "no-terminal-marker",
            Self::BothActionAndAnswer => "both-action-and-answer",
            Self::Empty => "empty",
        }
    }

    /// The grammar rule that was violated, phrased for the model.
    pub fn rule(self) -> &'static str {
        match self {
            Self::MissingActionInput => {
                "an `Action:` line must be followed by an `Action Input:` line with the tool input"
            }
            Self::EmptyAction => "the `Action:` line must name one of the tools",
            Self::NoTerminalMarker => {
                "answer `Yes` followed by `Action:` and `Action Input:` lines, or `No` followed by a line starting with `AI:`"
            }
            Self::BothActionAndAnswer => {
                "use either a tool (`Action:`) or a final answer (`AI:`) in one step, not both"
            }
            Self::Empty => "the reply must not be empty",
        }
    }
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentStep {
    ToolCall(ToolInvocation),
    FinalAnswer { text: String },
    FormatError {
        reason: FormatErrorKind,
        offending_text: String,
    },
}

struct Line<'a> {
    start: usize,
    text: &'a str,
}

fn lines_with_offsets(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    for piece in text.split_inclusive('\n') {
        out.push(Line {
            start,
            text: piece.trim_end_matches(['\n', '\r']),
        });
        start += piece.len();
    }
    out
}

fn starts_with_key(line: &str, key: &str) -> bool {
    line.trim_start().starts_with(key)
}

fn after_key<'a>(line: &'a str, key: &str) -> &'a str {
    let trimmed = line.trim_start();
    trimmed[key.len()..].trim()
}

/// The text before an `AI:` line must close the open thought with `No`.
fn declines_tools(before: &str) -> bool {
    let t = before.trim();
    match t.strip_suffix("No") {
        Some(rest) => rest.is_empty() || rest.ends_with(char::is_whitespace),
        None => false,
    }
}

pub fn parse_step(text: &str) -> AgentStep {
    let error = |reason| AgentStep::FormatError {
        reason,
        offending_text: text.to_string(),
    };
    if text.trim().is_empty() {
        return error(FormatErrorKind::Empty);
    }

    let lines = lines_with_offsets(text);
    let action = lines
        .iter()
        .position(|l| starts_with_key(l.text, ACTION) && !starts_with_key(l.text, ACTION_INPUT));
    let answer = lines.iter().position(|l| starts_with_key(l.text, ANSWER));

    match (action, answer) {
        (Some(_), Some(_)) => error(FormatErrorKind::BothActionAndAnswer),
        (Some(a), None) => {
            let tool_name = after_key(lines[a].text, ACTION);
            let Some(input_line) = lines[a + 1..].iter().find(|l| !l.text.trim().is_empty())
            else {
                return error(FormatErrorKind::MissingActionInput);
            };
            if !starts_with_key(input_line.text, ACTION_INPUT) {
                return error(FormatErrorKind::MissingActionInput);
            }
            if tool_name.is_empty() {
                return error(FormatErrorKind::EmptyAction);
            }
            let key_at = input_line.start + (input_line.text.len() - input_line.text.trim_start().len());
            let mut raw = &text[key_at + ACTION_INPUT.len()..];
            if let Some(cut) = raw.find(OBSERVATION) {
                raw = &raw[..cut];
            }
            let tool_input = raw.trim();
            if tool_input.is_empty() {
                return error(FormatErrorKind::MissingActionInput);
            }
            AgentStep::ToolCall(ToolInvocation {
                thought: text[..lines[a].start].trim().to_string(),
                tool_name: tool_name.to_string(),
                tool_input: tool_input.to_string(),
            })
        }
        (None, Some(i)) => {
            if !declines_tools(&text[..lines[i].start]) {
                return error(FormatErrorKind::NoTerminalMarker);
            }
            let line = &lines[i];
            let key_at = line.start + (line.text.len() - line.text.trim_start().len());
            AgentStep::FinalAnswer {
                text: text[key_at + ANSWER.len()..].trim().to_string(),
            }
        }
        (None, None) => error(FormatErrorKind::NoTerminalMarker),
    }
}
