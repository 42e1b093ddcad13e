//! Session-level evaluation of simulated conversations.

use std::collections::BTreeSet;

use super::judge::judge_session_success;
use super::metrics::{ratio, SessionRecord, SlotItem};
use crate::pdl::render_for_prompt;
use crate::pdl::PdlDocument;
use crate::runtime::action::{render_transcript, Action};
use crate::runtime::backend::LlmBackend;
use crate::sim::profile::UserProfile;

/// Required nodes with at least one successful `ToolResult`, in the
/// order given.
pub fn completed_required(actions: &[Action], required: &[String]) -> Vec<String> {
    let done: BTreeSet<&str> = actions
        .iter()
        .filter_map(|a| match a {
            Action::ToolResult {
                name, success: true, ..
            } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    required
        .iter()
        .filter(|r| done.contains(r.as_str()))
        .cloned()
        .collect()
}

/// Fraction of required nodes completed; 1.0 for an empty requirement.
pub fn task_progress(actions: &[Action], required: &[String]) -> f64 {
    let required: Vec<String> = required
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if required.is_empty() {
        return 1.0;
    }
    ratio(completed_required(actions, &required).len(), required.len())
}

pub fn judge_session(
    doc: &PdlDocument,
    session_id: &str,
    actions: &[Action],
    profile: &UserProfile,
    judge: &dyn LlmBackend,
) -> SessionRecord {
    let required = &profile.required_nodes;
    let mut warnings = Vec::new();
    if required.is_empty() {
        tracing::warn!(session_id, "no required nodes; task progress defaults to 1.0");
        warnings.push("no required nodes; task progress defaults to 1.0".to_string());
    }
    let judgement = judge_session_success(
        &render_for_prompt(doc),
        &profile.render_for_prompt(),
        &render_transcript(actions, false),
        judge,
    );
    if let Some(e) = &judgement.error {
        warnings.push(e.clone());
    }
    let called: BTreeSet<&str> = actions
        .iter()
        .filter_map(|a| match a {
            Action::ToolCall { name, .. } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    let user_turns: Vec<bool> = actions
        .iter()
        .filter_map(|a| match a {
            Action::UserMessage { oow, .. } => Some(oow.is_some()),
            _ => None,
        })
        .collect();
    let oow_turns = user_turns.iter().filter(|o| **o).count();
    SessionRecord {
        session_id: session_id.to_string(),
        oow: oow_turns > 0,
        success: judgement.success,
        task_progress: task_progress(actions, required),
        required_nodes: required.clone(),
        completed_nodes: completed_required(actions, required),
        reference_items: required.iter().map(SlotItem::name_only).collect(),
        predicted_items: called.into_iter().map(SlotItem::name_only).collect(),
        user_turns: user_turns.len(),
        oow_turns,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ok(name: &str) -> Action {
        Action::ToolResult {
            name: name.into(),
            payload: json!({}),
            success: true,
        }
    }

    fn req(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn counts_successful_required_results() {
        let actions = vec![
            ok("a"),
            ok("b"),
            Action::ToolResult {
                name: "c".into(),
                payload: json!({}),
                success: false,
            },
        ];
        assert_eq!(task_progress(&actions, &req(&["a", "b", "c", "d"])), 0.5);
        assert_eq!(task_progress(&actions, &req(&["a", "b"])), 1.0);
        assert_eq!(task_progress(&actions, &[]), 1.0);
    }

    #[test]
    fn claimed_success_without_execution_is_not_progress() {
        let actions = vec![
            Action::user("book me in"),
            ok("check_hospital"),
            Action::bot("Your appointment has been successful."),
        ];
        assert!(task_progress(&actions, &req(&["check_hospital", "register_hospital"])) < 1.0);
    }
}
