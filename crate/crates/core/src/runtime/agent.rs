//! The per-turn decision loop: guidance, prompt, backend, parse, veto,
//! tool execution.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::{Action, OowAnnotation};
use super::backend::{CompletionParams, LlmBackend, Message};
use super::labeler::{label_answer_node, Labeler};
use super::output::parse_llm_output;
use super::prompt::{api_infos, flowagent_prompt, react_prompt, FEEDBACK_PREFIX};
use super::registry::ToolRegistry;
use super::state::{Session, SessionState};
use crate::baselines::{render, RenderedWorkflow, WorkflowFormat};
use crate::controllers::{length_verdict, run_post, run_pre, ControllerConfig, CONVERSATION_LENGTH};
use crate::pdl::Workflow;

pub const FALLBACK_RESPONSE: &str =
    "I'm sorry, I'm unable to comply with that request right now. Could you rephrase it or give me a bit more detail?";
pub const CLOSING_RESPONSE: &str =
    "We have reached the length limit for this conversation. Thank you for your time, goodbye!";

pub const BACKEND_ID: &str = "backend";
pub const PARSER_ID: &str = "output_parser";
pub const TOOL_BUDGET_ID: &str = "tool_budget";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Flowagent,
    ReactNl,
    ReactCode,
    ReactFc,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Flowagent,
        AgentKind::ReactNl,
        AgentKind::ReactCode,
        AgentKind::ReactFc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Flowagent => "flowagent",
            AgentKind::ReactNl => "react-nl",
            AgentKind::ReactCode => "react-code",
            AgentKind::ReactFc => "react-fc",
        }
    }

    pub fn workflow_format(self) -> WorkflowFormat {
        match self {
            AgentKind::Flowagent => WorkflowFormat::Pdl,
            AgentKind::ReactNl => WorkflowFormat::Nl,
            AgentKind::ReactCode => WorkflowFormat::Code,
            AgentKind::ReactFc => WorkflowFormat::Flowchart,
        }
    }

    /// FlowAgent runs with every controller; the ReAct baselines with none.
    pub fn default_controllers(self) -> ControllerConfig {
        match self {
            AgentKind::Flowagent => ControllerConfig::default(),
            _ => ControllerConfig::disabled(),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown agent kind '{s}' (expected flowagent, react-nl, react-code or react-fc)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("session has ended")]
    SessionEnded,
    #[error("no user message awaiting a response")]
    NotAwaitingResponse,
}

/// Result of one policy call.
#[derive(Debug, Clone, PartialEq)]
pub enum Attempt {
    Accepted(Action),
    /// Carries the `ControllerFeedback` to log and show on the next retry.
    Rejected(Action),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub response: String,
    pub answer_node: Option<String>,
    /// Everything emitted during the turn, feedback included.
    pub emitted: Vec<Action>,
    pub fallback: bool,
    pub backend_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Accepted,
    /// The length limit closed the session instead.
    Closed { response: String },
}

#[derive(Clone)]
pub struct Agent {
    pub kind: AgentKind,
    pub workflow: Arc<Workflow>,
    pub backend: Arc<dyn LlmBackend>,
    pub registry: Arc<ToolRegistry>,
    pub controllers: ControllerConfig,
    pub labeler: Labeler,
    pub params: CompletionParams,
    pub current_time: String,
    rendered: RenderedWorkflow,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("kind", &self.kind)
            .field("backend", &self.backend.identity())
            .field("controllers", &self.controllers)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(
        kind: AgentKind,
        workflow: Arc<Workflow>,
        backend: Arc<dyn LlmBackend>,
        registry: Arc<ToolRegistry>,
    ) -> Self {
        let rendered = render(&workflow.doc, kind.workflow_format());
        Self {
            kind,
            controllers: kind.default_controllers(),
            workflow,
            backend,
            registry,
            labeler: Labeler::ExplicitOnly,
            params: CompletionParams::default(),
            current_time: "2024-01-01 09:00:00".into(),
            rendered,
        }
    }

    pub fn with_controllers(mut self, cfg: ControllerConfig) -> Self {
        self.controllers = cfg;
        self
    }

    pub fn with_labeler(mut self, labeler: Labeler) -> Self {
        self.labeler = labeler;
        self
    }

    pub fn with_current_time(mut self, t: impl Into<String>) -> Self {
        self.current_time = t.into();
        self
    }

    pub fn rendered_workflow(&self) -> &RenderedWorkflow {
        &self.rendered
    }

    /// Prompt for the next decision given this turn's feedback lines.
    pub fn prompt(&self, state: &SessionState, scratch: &[String]) -> String {
        let graph = &self.workflow.graph;
        let guidance = run_pre(&self.controllers, state, graph);
        match self.kind {
            AgentKind::Flowagent => {
                let access = if self.controllers.pre_enabled(crate::controllers::DEPENDENCY) {
                    let executed: Vec<&str> = state
                        .executed_names()
                        .into_iter()
                        .filter(|n| graph.nodes.contains(*n))
                        .collect();
                    graph.accessible_nodes(&executed).ok()
                } else {
                    None
                };
                flowagent_prompt(state, &guidance, &self.registry, access.as_ref(), scratch)
            }
            _ => {
                let doc = &self.workflow.doc;
                let mut scratch = scratch.to_vec();
                for g in &guidance {
                    scratch.push(format!("SYSTEM (guidance): {}", g.guidance_text));
                }
                react_prompt(
                    &doc.desc,
                    self.rendered.text.trim_end(),
                    &api_infos(doc, &self.registry, None),
                    &self.current_time,
                    &state.history,
                    &scratch,
                )
            }
        }
    }

    /// One backend call, parsed, labeled and checked by the post-controllers.
    pub fn attempt(&self, state: &SessionState, scratch: &[String], tool_budget_left: bool) -> Attempt {
        let prompt = self.prompt(state, scratch);
        let reject = |id: &str, text: String| {
            Attempt::Rejected(Action::ControllerFeedback {
                controller_id: id.to_string(),
                text,
            })
        };
        let raw = match self.backend.complete(&[Message::user(prompt)], &self.params) {
            Ok(r) => r,
            Err(e) => return reject(BACKEND_ID, format!("The model backend failed: {e}")),
        };
        let mut action = match parse_llm_output(&raw) {
            Ok(a) => a,
            Err(e) => {
                return reject(
                    PARSER_ID,
                    format!("{}. Answer with exactly one of the two output templates.", e),
                )
            }
        };
        if let Action::BotResponse {
            text, answer_node, ..
        } = &mut action
        {
            if answer_node.is_none() {
                *answer_node = label_answer_node(text, &self.workflow.doc, &self.labeler);
            }
        }
        if matches!(action, Action::ToolCall { .. }) && !tool_budget_left {
            return reject(
                TOOL_BUDGET_ID,
                format!(
                    "The limit of {} API calls for this turn has been reached. Reply to the user now.",
                    self.controllers.max_tool_calls_per_turn
                ),
            );
        }
        let verdict = run_post(&self.controllers, state, &self.workflow.graph, &action);
        if verdict.is_deny() {
            return reject(&verdict.controller_id, verdict.feedback.unwrap_or_default());
        }
        Attempt::Accepted(action)
    }

    /// True when admitting another user message would exceed the
    /// conversation-length limit.
    pub fn would_close(&self, state: &SessionState) -> bool {
        self.controllers.post_enabled(CONVERSATION_LENGTH)
            && length_verdict(state.user_turns + 1, &self.controllers).is_deny()
    }

    /// Emits the length feedback, the closing response and `SessionEnd`.
    pub fn close_for_length(&self, session: &mut Session) -> Admission {
        let v = length_verdict(session.state.user_turns + 1, &self.controllers);
        session.emit(Action::ControllerFeedback {
            controller_id: v.controller_id,
            text: v.feedback.unwrap_or_default(),
        });
        session.emit(Action::bot(CLOSING_RESPONSE));
        session.emit(Action::SessionEnd {
            reason: CONVERSATION_LENGTH.into(),
        });
        Admission::Closed {
            response: CLOSING_RESPONSE.into(),
        }
    }

    /// Appends a user message unless the conversation-length controller
    /// closes the session first.
    pub fn admit_user(
        &self,
        session: &mut Session,
        text: impl Into<String>,
        oow: Option<OowAnnotation>,
    ) -> Result<Admission, StepError> {
        if session.state.ended {
            return Err(StepError::SessionEnded);
        }
        if self.would_close(&session.state) {
            return Ok(self.close_for_length(session));
        }
        session.emit(Action::UserMessage {
            text: text.into(),
            oow,
        });
        Ok(Admission::Accepted)
    }

    /// Runs the agent until it produces a user-facing response for the
    /// pending user message.
    pub fn step(&self, session: &mut Session) -> Result<TurnOutcome, StepError> {
        if session.state.ended {
            return Err(StepError::SessionEnded);
        }
        if !session.state.awaiting_response() {
            return Err(StepError::NotAwaitingResponse);
        }
        let start = session.events.len();
        let mut scratch: Vec<String> = Vec::new();
        let mut failures = 0;
        let mut tool_calls = 0;
        let mut calls = 0;
        let finish = |session: &Session, response: String, answer_node, fallback, calls| TurnOutcome {
            response,
            answer_node,
            emitted: session.events[start..].iter().map(|e| e.action.clone()).collect(),
            fallback,
            backend_calls: calls,
        };
        loop {
            if failures >= self.controllers.max_policy_retries_per_turn {
                session.emit(Action::bot(FALLBACK_RESPONSE));
                return Ok(finish(session, FALLBACK_RESPONSE.into(), None, true, calls));
            }
            calls += 1;
            let budget = tool_calls < self.controllers.max_tool_calls_per_turn;
            match self.attempt(&session.state, &scratch, budget) {
                Attempt::Rejected(feedback) => {
                    if let Action::ControllerFeedback { controller_id, text } = &feedback {
                        tracing::debug!(session = %session.state.session_id, controller_id, "attempt rejected");
                        scratch.push(format!("{FEEDBACK_PREFIX} {text}"));
                    }
                    session.emit(feedback);
                    failures += 1;
                }
                Attempt::Accepted(Action::ToolCall { name, args, thought }) => {
                    let prior = session
                        .state
                        .history
                        .iter()
                        .filter(|a| matches!(a, Action::ToolCall { name: n, .. } if *n == name))
                        .count();
                    let result = self.registry.execute(&name, &args, prior);
                    session.emit(Action::ToolCall {
                        name: name.clone(),
                        args,
                        thought,
                    });
                    let (payload, success) = match result {
                        Ok(p) => (p, true),
                        Err(e) => (e.payload(), false),
                    };
                    session.emit(Action::ToolResult { name, payload, success });
                    tool_calls += 1;
                }
                Attempt::Accepted(action @ Action::BotResponse { .. }) => {
                    let (text, node) = match &action {
                        Action::BotResponse { text, answer_node, .. } => (text.clone(), answer_node.clone()),
                        _ => unreachable!(),
                    };
                    session.emit(action);
                    return Ok(finish(session, text, node, false, calls));
                }
                Attempt::Accepted(other) => {
                    // parse_llm_output only yields replies and tool calls
                    unreachable!("unexpected action {other:?}");
                }
            }
        }
    }

    /// `admit_user` followed by `step`.
    pub fn chat_turn(&self, session: &mut Session, text: &str) -> Result<TurnOutcome, StepError> {
        match self.admit_user(session, text, None)? {
            Admission::Accepted => self.step(session),
            Admission::Closed { response } => Ok(TurnOutcome {
                response,
                answer_node: None,
                emitted: Vec::new(),
                fallback: false,
                backend_calls: 0,
            }),
        }
    }
}
