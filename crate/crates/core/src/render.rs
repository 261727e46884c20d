//! Deterministic renders of the catalog and prompts, written to disk by the
//! `render-prompts` command and compared against the golden trees in tests.

use crate::engine::{ReasoningTrace, ToolInvocation, TraceStep};
use crate::naming::WorkspacePath;
use crate::prompt::{assemble, render_upload_event, wrap_user_query, DialogueHistory, PromptSet, UserQuery};
use crate::registry::{golden_file_name, render_tool_block, Registry};

/// `(relative path, contents)` pairs in a fixed order.
pub fn render_files(prompts: &PromptSet, registry: &Registry) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, spec) in registry.specs().iter().enumerate() {
        out.push((
            format!("tools/{}", golden_file_name(i, spec)),
            render_tool_block(spec) + "\n",
        ));
    }
    let all = registry
        .with_enabled(registry.specs().iter().map(|s| s.name.clone()))
        .expect("catalog names are known");
    out.push(("tools/catalog.txt".into(), all.render_tools_section() + "\n"));

    out.push(("prompts/prefix.txt".into(), prompts.prefix().to_string() + "\n"));
    out.push((
        "prompts/format_instructions.txt".into(),
        prompts.format_instructions(&all) + "\n",
    ));
    out.push(("prompts/suffix.txt".into(), prompts.suffix().to_string() + "\n"));

    let query = wrap_user_query(&UserQuery::text("describe this image"), prompts);
    out.push((
        "prompts/assembled_empty.txt".into(),
        assemble(prompts, &all, &DialogueHistory::default(), &query, &ReasoningTrace::default()),
    ));

    let upload = WorkspacePath::new("image", "o0ec", "png");
    let mut history = DialogueHistory::default();
    history.push_pair(render_upload_event(&upload));
    let query = wrap_user_query(&UserQuery::text("detect the edges of this image"), prompts);
    let mut trace = ReasoningTrace::default();
    let output = WorkspacePath::new("image", "ui3c_edge-of_o0ec_o0ec", "png");
    trace.push(TraceStep {
        call: ToolInvocation {
            thought: "Yes".into(),
            tool_name: "Edge Detection On Image".into(),
            tool_input: upload.to_string(),
        },
        observation: output.to_string(),
        files: vec![output],
    });
    out.push((
        "prompts/assembled_one_step.txt".into(),
        assemble(prompts, &all, &history, &query, &trace),
    ));
    out
}
