//! Core of a chat assistant that routes image requests through a catalog of
//! visual tools. A language model decides, step by step, whether to call a
//! tool; tool outputs are written into a session workspace under names that
//! encode their derivation chain.

pub mod backend;
pub mod engine;
pub mod executor;
pub mod kv;
pub mod naming;
pub mod prompt;
pub mod provenance;
pub mod registry;
pub mod render;
pub mod step;
pub mod workspace;

pub use backend::{BackendError, CompletionBackend, CompletionRequest};
pub use engine::{Engine, EngineConfig, ReasoningTrace, RoundResult, Termination};
pub use executor::{ExecError, ToolExecutor, ToolOutput};
pub use naming::{parse_name, WorkspacePath};
pub use prompt::{DialogueHistory, PromptSet, TokenBudget, UserQuery};
pub use provenance::{build_provenance, ProvenanceGraph};
pub use registry::{builtin_catalog, Registry, ToolSpec};
pub use step::{parse_step, AgentStep, FormatErrorKind};
pub use workspace::Workspace;
