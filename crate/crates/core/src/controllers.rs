//! Pre-decision guidance and post-decision vetoes over session state.
//!
//! Every function here is pure: it reads the state and the proposed action
//! and returns a judgment. Counting is done against `SessionState`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::pdl::DependencyGraph;
use crate::runtime::action::Action;
use crate::runtime::registry::canonical_args;
use crate::runtime::state::SessionState;

pub const DEPENDENCY: &str = "dependency";
pub const API_REPETITION: &str = "api_repetition";
pub const CONVERSATION_LENGTH: &str = "conversation_length";

/// Evaluation order for both phases.
pub const REGISTRATION_ORDER: [&str; 3] = [DEPENDENCY, API_REPETITION, CONVERSATION_LENGTH];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreGuidance {
    pub controller_id: String,
    pub guidance_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerVerdict {
    pub controller_id: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

impl ControllerVerdict {
    pub fn allow(controller_id: &str) -> Self {
        Self {
            controller_id: controller_id.to_string(),
            decision: Decision::Allow,
            feedback: None,
        }
    }

    pub fn deny(controller_id: &str, feedback: impl Into<String>) -> Self {
        Self {
            controller_id: controller_id.to_string(),
            decision: Decision::Deny,
            feedback: Some(feedback.into()),
        }
    }

    pub fn is_deny(&self) -> bool {
        self.decision == Decision::Deny
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub max_identical_api_calls: usize,
    pub max_total_turns: usize,
    pub max_policy_retries_per_turn: usize,
    pub max_tool_calls_per_turn: usize,
    pub enabled_pre: BTreeSet<String>,
    pub enabled_post: BTreeSet<String>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let all: BTreeSet<String> = REGISTRATION_ORDER.iter().map(|s| s.to_string()).collect();
        Self {
            max_identical_api_calls: 3,
            max_total_turns: 20,
            max_policy_retries_per_turn: 3,
            max_tool_calls_per_turn: 5,
            enabled_pre: all.clone(),
            enabled_post: all,
        }
    }
}

impl ControllerConfig {
    /// No guidance and no vetoes; bounds keep their defaults.
    pub fn disabled() -> Self {
        Self {
            enabled_pre: BTreeSet::new(),
            enabled_post: BTreeSet::new(),
            ..Self::default()
        }
    }

    pub fn without_pre(mut self) -> Self {
        self.enabled_pre.clear();
        self
    }

    pub fn without_post(mut self) -> Self {
        self.enabled_post.clear();
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_identical_api_calls", self.max_identical_api_calls),
            ("max_total_turns", self.max_total_turns),
            ("max_policy_retries_per_turn", self.max_policy_retries_per_turn),
            ("max_tool_calls_per_turn", self.max_tool_calls_per_turn),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        for id in self.enabled_pre.iter().chain(&self.enabled_post) {
            if !REGISTRATION_ORDER.contains(&id.as_str()) {
                return Err(format!("unknown controller '{id}'"));
            }
        }
        Ok(())
    }

    pub fn pre_enabled(&self, id: &str) -> bool {
        self.enabled_pre.contains(id)
    }

    pub fn post_enabled(&self, id: &str) -> bool {
        self.enabled_post.contains(id)
    }
}

fn join(items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let v: Vec<String> = items.into_iter().map(|s| s.as_ref().to_string()).collect();
    if v.is_empty() {
        "(none)".into()
    } else {
        v.join(", ")
    }
}

/// Lists accessible nodes and blocked nodes with their unmet preconditions.
pub fn pre_dependency(state: &SessionState, graph: &DependencyGraph) -> PreGuidance {
    let executed: Vec<&str> = state
        .executed_names()
        .into_iter()
        .filter(|n| graph.nodes.contains(*n))
        .collect();
    let acc = graph
        .accessible_nodes(&executed)
        .expect("executed nodes filtered to the graph");
    let mut text = String::from("Node dependency status:\n");
    text.push_str(&format!("- Accessible nodes: {}\n", join(&acc.accessible)));
    if acc.blocked.is_empty() {
        text.push_str("- Blocked nodes: (none)");
    } else {
        text.push_str("- Blocked nodes (do not call or answer these yet):");
        for (n, unmet) in &acc.blocked {
            text.push_str(&format!("\n  - {n}: requires {}", join(unmet)));
        }
    }
    PreGuidance {
        controller_id: DEPENDENCY.into(),
        guidance_text: text,
    }
}

/// Allows a node action only when all its preconditions have executed.
pub fn post_dependency(state: &SessionState, graph: &DependencyGraph, action: &Action) -> ControllerVerdict {
    let doc = &state.workflow.doc;
    let (target, kind_ok) = match action {
        Action::ToolCall { name, .. } => (name.as_str(), doc.api(name).is_some()),
        Action::BotResponse {
            answer_node: Some(n),
            ..
        } => (n.as_str(), doc.answer(n).is_some()),
        _ => return ControllerVerdict::allow(DEPENDENCY),
    };
    if !kind_ok || !graph.nodes.contains(target) {
        let what = if matches!(action, Action::ToolCall { .. }) {
            "API"
        } else {
            "ANSWER"
        };
        return ControllerVerdict::deny(
            DEPENDENCY,
            format!("'{target}' is an unknown node: no {what} node with that name is declared in the workflow."),
        );
    }
    let unmet: Vec<&String> = graph
        .preconditions(target)
        .into_iter()
        .flatten()
        .filter(|p| state.execution_count(p) == 0)
        .collect();
    if unmet.is_empty() {
        ControllerVerdict::allow(DEPENDENCY)
    } else {
        ControllerVerdict::deny(
            DEPENDENCY,
            format!(
                "'{target}' is not accessible yet. Unmet preconditions: {}. Complete these steps first.",
                join(unmet)
            ),
        )
    }
}

/// Prior successful executions of `name` with canonically equal arguments.
pub fn identical_call_count(state: &SessionState, name: &str, key: &str) -> usize {
    state
        .history
        .windows(2)
        .filter(|w| match (&w[0], &w[1]) {
            (
                Action::ToolCall { name: n, args, .. },
                Action::ToolResult {
                    name: rn,
                    success: true,
                    ..
                },
            ) => n == name && rn == name && canonical_args(args) == key,
            _ => false,
        })
        .count()
}

fn repeated_calls(state: &SessionState, cfg: &ControllerConfig) -> Vec<(String, String)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for a in &state.history {
        if let Action::ToolCall { name, args, .. } = a {
            let key = canonical_args(args);
            if seen.insert((name.clone(), key.clone()))
                && identical_call_count(state, name, &key) >= cfg.max_identical_api_calls
            {
                out.push((name.clone(), key));
            }
        }
    }
    out
}

/// Names calls that have hit the repetition limit, if any.
pub fn pre_api_repetition(state: &SessionState, cfg: &ControllerConfig) -> Option<PreGuidance> {
    let exhausted = repeated_calls(state, cfg);
    if exhausted.is_empty() {
        return None;
    }
    let mut text = String::from("API calls that have reached the repetition limit (do not repeat them with the same arguments):");
    for (n, k) in exhausted {
        text.push_str(&format!("\n  - {n} {k}"));
    }
    Some(PreGuidance {
        controller_id: API_REPETITION.into(),
        guidance_text: text,
    })
}

pub fn post_api_repetition(state: &SessionState, action: &Action, cfg: &ControllerConfig) -> ControllerVerdict {
    let Action::ToolCall { name, args, .. } = action else {
        return ControllerVerdict::allow(API_REPETITION);
    };
    let key = canonical_args(args);
    let n = identical_call_count(state, name, &key);
    if n >= cfg.max_identical_api_calls {
        ControllerVerdict::deny(
            API_REPETITION,
            format!(
                "'{name}' has already been called {n} time(s) with identical arguments (limit {}). Use the earlier result or ask the user for different values.",
                cfg.max_identical_api_calls
            ),
        )
    } else {
        ControllerVerdict::allow(API_REPETITION)
    }
}

/// Deny once more than `max_total_turns` user turns are in play.
pub fn length_verdict(user_turns: usize, cfg: &ControllerConfig) -> ControllerVerdict {
    if user_turns > cfg.max_total_turns {
        ControllerVerdict::deny(
            CONVERSATION_LENGTH,
            format!(
                "The conversation has reached the maximum of {} user turns. Close the conversation politely.",
                cfg.max_total_turns
            ),
        )
    } else {
        ControllerVerdict::allow(CONVERSATION_LENGTH)
    }
}

pub fn post_conversation_length(state: &SessionState, cfg: &ControllerConfig) -> ControllerVerdict {
    length_verdict(state.user_turns, cfg)
}

/// Guidance from every enabled pre-controller, in registration order.
pub fn run_pre(cfg: &ControllerConfig, state: &SessionState, graph: &DependencyGraph) -> Vec<PreGuidance> {
    let mut out = Vec::new();
    for id in REGISTRATION_ORDER {
        if !cfg.pre_enabled(id) {
            continue;
        }
        match id {
            DEPENDENCY => out.push(pre_dependency(state, graph)),
            API_REPETITION => out.extend(pre_api_repetition(state, cfg)),
            _ => {}
        }
    }
    out
}

/// First Deny among the enabled post-controllers, else Allow.
pub fn run_post(
    cfg: &ControllerConfig,
    state: &SessionState,
    graph: &DependencyGraph,
    action: &Action,
) -> ControllerVerdict {
    for id in REGISTRATION_ORDER {
        if !cfg.post_enabled(id) {
            continue;
        }
        let v = match id {
            DEPENDENCY => post_dependency(state, graph, action),
            API_REPETITION => post_api_repetition(state, action, cfg),
            CONVERSATION_LENGTH => post_conversation_length(state, cfg),
            _ => unreachable!("registered ids only"),
        };
        if v.is_deny() {
            return v;
        }
    }
    ControllerVerdict::allow("controllers")
}
