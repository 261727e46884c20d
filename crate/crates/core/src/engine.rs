//! The per-round reasoning loop: assemble a prompt, ask the model for one
//! step, run the named tool, append the observation, repeat.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::backend::{BackendError, CompletionBackend, CompletionRequest};
use crate::executor::{ToolExecutor, ToolOutput};
use crate::naming::WorkspacePath;
use crate::prompt::{
    assemble, truncate_history, wrap_user_query, DialogueHistory, PromptSet, TokenBudget,
    UserQuery, FORCE_THINKING_MARKER,
};
use crate::registry::{split_tool_input, Registry};
use crate::step::{parse_step, AgentStep, FormatErrorKind};
use crate::workspace::Workspace;

pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_FORMAT_RETRIES: usize = 2;
pub const DEFAULT_STOP: &str = "\nObservation:";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 256;

pub const FORMAT_FAILURE_ANSWER: &str = "I could not complete this request because my replies did not follow the required format. Please try rephrasing it.";

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Tool calls allowed per round.
    pub max_steps: usize,
    /// Corrective re-prompts allowed per step after a malformed reply.
    pub format_retries: usize,
    pub stop: Vec<String>,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            format_retries: DEFAULT_FORMAT_RETRIES,
            stop: vec![DEFAULT_STOP.to_string()],
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub thought: String,
    pub tool_name: String,
    pub tool_input: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub call: ToolInvocation,
    pub observation: String,
    /// Files written by this step.
    pub files: Vec<WorkspacePath>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    steps: Vec<TraceStep>,
}

/// Flat export form of one trace step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub j: usize,
    pub thought: String,
    pub tool: String,
    pub input: String,
    pub observation: String,
    pub files: Vec<String>,
}

impl ReasoningTrace {
    pub fn push(&mut self, step: TraceStep) {
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(j, s)| TraceRecord {
                j,
                thought: s.call.thought.clone(),
                tool: s.call.tool_name.clone(),
                input: s.call.tool_input.clone(),
                observation: s.observation.clone(),
                files: s.files.iter().map(|f| f.to_string()).collect(),
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Normal,
    /// The model asked the user a question instead of using a tool.
    Clarification,
    StepLimit,
    FormatFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Clarification => "clarification",
            Self::StepLimit => "step-limit",
            Self::FormatFailure => "format-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundResult {
    pub final_answer: String,
    pub trace: ReasoningTrace,
    pub new_files: Vec<WorkspacePath>,
    pub termination: Termination,
    /// Completions requested, including format retries.
    pub completions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A backend failure ends the round; the steps already taken are kept.
#[derive(Debug, Error)]
#[error("{source}")]
pub struct RoundError {
    #[source]
    pub source: BackendError,
    pub trace: ReasoningTrace,
    pub new_files: Vec<WorkspacePath>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatDecision {
    Retry { corrective: String },
    GiveUp,
}

/// `attempt` numbers the malformed reply within the current step, from 1.
pub fn handle_format_error(
    reason: FormatErrorKind,
    attempt: usize,
    config: &EngineConfig,
) -> FormatDecision {
    if attempt > config.format_retries {
        return FormatDecision::GiveUp;
    }
    FormatDecision::Retry {
        corrective: format!(
            "Your previous reply could not be used ({reason}): {}. Reply again in the required format.",
            reason.rule()
        ),
    }
}

pub fn observation_of(output: &ToolOutput) -> String {
    match output {
        ToolOutput::Text(t) => t.clone(),
        ToolOutput::Image(p) => p.to_string(),
    }
}

pub fn step_limit_answer(max_steps: usize, files: &[WorkspacePath]) -> String {
    let mut out = format!(
        "I stopped after {max_steps} tool calls without reaching an answer."
    );
    if !files.is_empty() {
        let names: Vec<String> = files.iter().map(|f| f.to_string()).collect();
        out.push_str(" Files produced so far: ");
        out.push_str(&names.join(", "));
        out.push('.');
    }
    out
}

pub struct Engine<'a> {
    prompts: &'a PromptSet,
    registry: &'a Registry,
    backend: &'a dyn CompletionBackend,
    executor: &'a dyn ToolExecutor,
    config: EngineConfig,
    budget: TokenBudget,
}

impl<'a> Engine<'a> {
    pub fn new(
        prompts: &'a PromptSet,
        registry: &'a Registry,
        backend: &'a dyn CompletionBackend,
        executor: &'a dyn ToolExecutor,
    ) -> Self {
        Self {
            prompts,
            registry,
            backend,
            executor,
            config: EngineConfig::default(),
            budget: TokenBudget::default(),
        }
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_budget(mut self, budget: TokenBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Run the tool named by `call`. Every failure becomes the observation
    /// so the model can react to it.
    pub fn dispatch(
        &self,
        call: &ToolInvocation,
        workspace: &mut Workspace,
    ) -> (String, Vec<WorkspacePath>) {
        let spec = match self.registry.lookup(&call.tool_name) {
            Ok(spec) => spec,
            Err(e) => {
                let names = self.registry.enabled_names().join(", ");
                return (format!("{e}. Available tools: {names}."), Vec::new());
            }
        };
        let fields = match split_tool_input(&call.tool_input, spec.input_arity()) {
            Ok(f) => f,
            Err(e) => return (e.to_string(), Vec::new()),
        };
        match self.executor.execute(spec, &fields, workspace) {
            Ok(output) => {
                let files = match &output {
                    ToolOutput::Image(p) => vec![p.clone()],
                    ToolOutput::Text(_) => Vec::new(),
                };
                (observation_of(&output), files)
            }
            Err(e) => (format!("tool-error: {e}"), Vec::new()),
        }
    }

    pub fn run_round(
        &self,
        history: &DialogueHistory,
        workspace: &mut Workspace,
        query: &UserQuery,
    ) -> Result<RoundResult, RoundError> {
        let mut warnings = Vec::new();
        let truncation = truncate_history(history, &self.budget);
        if let Some(o) = &truncation.overflow {
            warnings.push(format!(
                "newest history pair uses {} tokens, over the budget of {}",
                o.tokens, o.budget
            ));
        }
        let wrapped = wrap_user_query(query, self.prompts);
        warnings.extend(wrapped.warning.clone());

        let mut trace = ReasoningTrace::default();
        let mut new_files: Vec<WorkspacePath> = Vec::new();
        let mut completions = 0;

        let finish = |final_answer: String,
                      termination,
                      trace: ReasoningTrace,
                      new_files,
                      completions,
                      warnings| RoundResult {
            final_answer,
            trace,
            new_files,
            termination,
            completions,
            warnings,
        };

        for j in 0..self.config.max_steps {
            let base = assemble(self.prompts, self.registry, &truncation.history, &wrapped, &trace);
            let mut prompt = base.clone();
            let mut attempt = 0;
            let step = loop {
                let request = CompletionRequest::new(
                    prompt.as_str(),
                    self.config.stop.clone(),
                    self.config.max_output_tokens,
                    self.config.temperature,
                );
                let reply = request.and_then(|r| {
                    completions += 1;
                    self.backend.complete(&r)
                });
                let text = match reply {
                    Ok(t) => t,
                    Err(source) => {
                        return Err(RoundError {
                            source,
                            trace,
                            new_files,
                        })
                    }
                };
                match parse_step(&text) {
                    AgentStep::FormatError { reason, .. } => {
                        attempt += 1;
                        debug!(step = j, attempt, %reason, "malformed reply");
                        match handle_format_error(reason, attempt, &self.config) {
                            FormatDecision::Retry { corrective } => {
                                prompt = format!("{base}\n{corrective}\n{FORCE_THINKING_MARKER}");
                            }
                            FormatDecision::GiveUp => {
                                return Ok(finish(
                                    FORMAT_FAILURE_ANSWER.to_string(),
                                    Termination::FormatFailure,
                                    trace,
                                    new_files,
                                    completions,
                                    warnings,
                                ))
                            }
                        }
                    }
                    other => break other,
                }
            };
            match step {
                AgentStep::FinalAnswer { text } => {
                    let termination = if trace.is_empty() && text.trim_end().ends_with('?') {
                        Termination::Clarification
                    } else {
                        Termination::Normal
                    };
                    return Ok(finish(text, termination, trace, new_files, completions, warnings));
                }
                AgentStep::ToolCall(call) => {
                    let (observation, files) = self.dispatch(&call, workspace);
                    debug!(step = j, tool = %call.tool_name, %observation, "tool step");
                    new_files.extend(files.iter().cloned());
                    trace.push(TraceStep {
                        call,
                        observation,
                        files,
                    });
                }
                AgentStep::FormatError { .. } => unreachable!("format errors are handled above"),
            }
        }
        let answer = step_limit_answer(self.config.max_steps, &new_files);
        Ok(finish(
            answer,
            Termination::StepLimit,
            trace,
            new_files,
            completions,
            warnings,
        ))
    }
}
