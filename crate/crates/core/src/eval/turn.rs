//! Turn-level evaluation: replay each reference prefix and score the
//! agent's next action.

use serde_json::{Map, Value};

use super::judge::judge_turn;
use super::metrics::{SlotItem, TurnKind, TurnRecord};
use super::reference::{ReferenceSession, TurnRole};
use crate::pdl::render_for_prompt;
use crate::runtime::action::{render_transcript, Action};
use crate::runtime::agent::{Agent, Attempt, FALLBACK_RESPONSE};
use crate::runtime::backend::LlmBackend;
use crate::runtime::output::render_llm_output;
use crate::runtime::prompt::FEEDBACK_PREFIX;
use crate::runtime::state::SessionState;

/// Trimmed text; numbers (or numeric strings) in a canonical numeric form
/// so that `"15"`, `15` and `15.0` compare equal.
pub fn normalize_slot_value(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.trim().to_string(),
        other => other.to_string(),
    };
    match raw.parse::<f64>() {
        Ok(n) if n.is_finite() => format!("{n}"),
        _ => raw,
    }
}

/// One item per argument; a zero-argument call yields a name-only item.
pub fn slot_items(tool: &str, args: &Map<String, Value>) -> Vec<SlotItem> {
    if args.is_empty() {
        return vec![SlotItem::name_only(tool)];
    }
    args.iter()
        .map(|(k, v)| SlotItem {
            tool: tool.to_string(),
            slot: k.clone(),
            value: normalize_slot_value(v),
        })
        .collect()
}

/// The agent's proposal for the next BOT turn, with the usual retry
/// budget but without executing tools.
pub fn predict_next(agent: &Agent, state: &SessionState) -> (Action, Option<String>) {
    let mut scratch = Vec::new();
    let mut last_error = None;
    for _ in 0..agent.controllers.max_policy_retries_per_turn.max(1) {
        match agent.attempt(state, &scratch, true) {
            Attempt::Accepted(a) => return (a, None),
            Attempt::Rejected(Action::ControllerFeedback { controller_id, text }) => {
                scratch.push(format!("{FEEDBACK_PREFIX} {text}"));
                last_error = Some(format!("{controller_id}: {text}"));
            }
            Attempt::Rejected(_) => unreachable!("rejections carry feedback"),
        }
    }
    (Action::bot(FALLBACK_RESPONSE), last_error)
}

pub fn evaluate_turn(
    agent: &Agent,
    reference: &ReferenceSession,
    session_id: &str,
    judge: &dyn LlmBackend,
) -> Vec<TurnRecord> {
    let actions = reference.to_actions();
    let workflow_info = render_for_prompt(&agent.workflow.doc);
    let mut records = Vec::new();
    let mut latest_user_oow = false;
    for (i, turn) in reference.turns.iter().enumerate() {
        if turn.role == TurnRole::User {
            latest_user_oow = turn.oow_annotation.is_some();
            continue;
        }
        if turn.role != TurnRole::Bot {
            continue;
        }
        let prefix = &actions[..i];
        let state = SessionState::replay(session_id, agent.workflow.clone(), prefix);
        let (predicted, error) = predict_next(agent, &state);
        let predicted_items = match &predicted {
            Action::ToolCall { name, args, .. } => slot_items(name, args),
            _ => Vec::new(),
        };
        let mut record = TurnRecord {
            session_id: session_id.to_string(),
            turn_index: i,
            kind: TurnKind::Response,
            oow: latest_user_oow,
            consistent: false,
            scores: None,
            reference_items: Vec::new(),
            predicted_items,
            predicted: predicted.clone(),
            error,
        };
        match &turn.tool_call {
            Some(call) => {
                record.kind = TurnKind::ToolCall;
                record.reference_items = slot_items(&call.name, &call.args);
                let mut r = record.reference_items.clone();
                let mut p = record.predicted_items.clone();
                r.sort();
                p.sort();
                record.consistent = matches!(&predicted, Action::ToolCall { name, .. } if *name == call.name) && r == p;
            }
            None => {
                if let Action::BotResponse { text, .. } = &predicted {
                    let j = judge_turn(&workflow_info, &render_transcript(prefix, false), &turn.text, text, judge);
                    record.consistent = j.consistent;
                    record.scores = Some(j.scores);
                    if j.error.is_some() {
                        record.error = j.error;
                    }
                }
            }
        }
        records.push(record);
    }
    records
}

/// Policy outputs that reproduce every BOT turn of `reference`, in order.
pub fn echo_script(reference: &ReferenceSession) -> Vec<String> {
    let actions = reference.to_actions();
    reference
        .bot_turn_indices()
        .into_iter()
        .filter_map(|i| render_llm_output(&actions[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn numeric_values_compare_numerically() {
        assert_eq!(normalize_slot_value(&json!(" 15 ")), normalize_slot_value(&json!(15)));
        assert_eq!(normalize_slot_value(&json!("15.0")), "15");
        assert_eq!(normalize_slot_value(&json!(" Friday ")), "Friday");
        assert_ne!(normalize_slot_value(&json!("friday")), normalize_slot_value(&json!("Friday")));
    }

    #[test]
    fn zero_argument_calls_yield_a_name_item() {
        assert_eq!(slot_items("ping", &Map::new()), vec![SlotItem::name_only("ping")]);
    }
}
