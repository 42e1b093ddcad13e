//! Prompt templates and their renderers.

use crate::controllers::PreGuidance;
use crate::pdl::{render_for_prompt, Accessibility, PdlDocument};

use super::action::{render_transcript, Action};
use super::registry::ToolRegistry;
use super::state::SessionState;

pub const FLOWAGENT_TEMPLATE: &str = include_str!("templates/flowagent.txt");
pub const REACT_TEMPLATE: &str = include_str!("templates/react.txt");
pub const USER_SIMULATION_TEMPLATE: &str = include_str!("templates/user_simulation.txt");
pub const TURN_JUDGE_TEMPLATE: &str = include_str!("templates/turn_judge.txt");
pub const SESSION_JUDGE_TEMPLATE: &str = include_str!("templates/session_judge.txt");

pub const EMPTY_HISTORY: &str = "(no conversation yet)";
pub const FEEDBACK_PREFIX: &str = "SYSTEM (controller feedback):";

/// Substitutes `{{ name }}` and `{{ name | trim }}` placeholders. Unknown
/// names are left in place.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return out;
        };
        let inner = &after[..end];
        let mut parts = inner.split('|').map(str::trim);
        let name = parts.next().unwrap_or("");
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => {
                let mut v = v.to_string();
                for filter in parts {
                    if filter == "trim" {
                        v = v.trim().to_string();
                    }
                }
                out.push_str(&v);
            }
            None => out.push_str(&rest[start..start + 2 + end + 2]),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

/// One OpenAI function schema per API node, in declaration order. When
/// `access` is given, blocked tools are annotated rather than hidden.
pub fn api_infos(doc: &PdlDocument, registry: &ToolRegistry, access: Option<&Accessibility>) -> String {
    let mut lines = Vec::new();
    for n in &doc.api_nodes {
        let mut schema = registry.function_schema(&n.name).unwrap_or_else(|| {
            serde_json::json!({"type": "function", "function": {"name": n.name}})
        });
        if let Some(unmet) = access.and_then(|a| a.blocked.get(&n.name)) {
            let note = format!(
                "[blocked: requires {}]",
                unmet.iter().cloned().collect::<Vec<_>>().join(", ")
            );
            let f = &mut schema["function"];
            let desc = match f.get("description").and_then(|d| d.as_str()) {
                Some(d) => format!("{note} {d}"),
                None => note,
            };
            f["description"] = serde_json::Value::String(desc);
        }
        lines.push(serde_json::to_string(&schema).expect("schema serializes"));
    }
    if lines.is_empty() {
        "(no APIs)".into()
    } else {
        lines.join("\n")
    }
}

/// Conversation text with this turn's rejected-attempt feedback appended.
pub fn conversation_text(history: &[Action], scratch: &[String]) -> String {
    let mut text = render_transcript(history, false);
    if text.is_empty() {
        text = EMPTY_HISTORY.to_string();
    }
    for s in scratch {
        text.push('\n');
        text.push_str(s);
    }
    text
}

pub fn current_state_text(state: &SessionState, guidance: &[PreGuidance]) -> String {
    let executed = state.executed_in_order();
    let mut text = format!(
        "Executed nodes: {}",
        if executed.is_empty() {
            "(none)".to_string()
        } else {
            executed.join(", ")
        }
    );
    for g in guidance {
        text.push('\n');
        text.push_str(&g.guidance_text);
    }
    text
}

pub fn flowagent_prompt(
    state: &SessionState,
    guidance: &[PreGuidance],
    registry: &ToolRegistry,
    access: Option<&Accessibility>,
    scratch: &[String],
) -> String {
    let doc = &state.workflow.doc;
    fill(
        FLOWAGENT_TEMPLATE,
        &[
            ("PDL", render_for_prompt(doc).trim_end()),
            ("api_infos", &api_infos(doc, registry, access)),
            ("conversation", &conversation_text(&state.history, scratch)),
            ("current_state", &current_state_text(state, guidance)),
        ],
    )
}

pub fn react_prompt(
    task_description: &str,
    workflow_text: &str,
    toolbox: &str,
    current_time: &str,
    history: &[Action],
    scratch: &[String],
) -> String {
    fill(
        REACT_TEMPLATE,
        &[
            ("task_description", task_description),
            ("workflow", workflow_text),
            ("toolbox", toolbox),
            ("current_time", current_time),
            ("history_conversation", &conversation_text(history, scratch)),
        ],
    )
}

pub fn user_simulation_prompt(assistant_description: &str, user_profile: &str, history: &[Action]) -> String {
    fill(
        USER_SIMULATION_TEMPLATE,
        &[
            ("assistant_description", assistant_description),
            ("user_profile", user_profile),
            ("history_conversation", &conversation_text(history, &[])),
        ],
    )
}

pub fn turn_judge_prompt(workflow_info: &str, session: &str, reference: &str, predicted: &str) -> String {
    fill(
        TURN_JUDGE_TEMPLATE,
        &[
            ("workflow_info", workflow_info),
            ("session", session),
            ("reference_input", reference),
            ("predicted_input", predicted),
        ],
    )
}

pub fn session_judge_prompt(workflow_info: &str, user_profile: &str, session: &str) -> String {
    fill(
        SESSION_JUDGE_TEMPLATE,
        &[
            ("workflow_info", workflow_info),
            ("user_profile", user_profile),
            ("session", session),
        ],
    )
}
