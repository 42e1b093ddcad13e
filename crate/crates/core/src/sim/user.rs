//! LLM-backed simulated user.

use std::sync::Arc;

use thiserror::Error;

use super::profile::UserProfile;
use crate::runtime::action::Action;
use crate::runtime::backend::{BackendError, CompletionParams, LlmBackend, Message};
use crate::runtime::prompt::user_simulation_prompt;

pub const END_MARKER: &str = "[END]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserTurn {
    Utterance(String),
    End,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("user simulator backend failed: {0}")]
    Backend(#[from] BackendError),
}

/// Extracts the `Response:` field; `None` when absent or empty.
pub fn parse_user_output(text: &str) -> Option<UserTurn> {
    let mut lines = text.lines().skip_while(|l| !l.trim_start().starts_with("Response:"));
    let first = lines.next()?.trim_start().strip_prefix("Response:")?;
    let mut body = vec![first];
    body.extend(lines.take_while(|l| !l.trim_start().starts_with("```")));
    let body = body.join("\n").trim().to_string();
    if body.is_empty() {
        None
    } else if body.contains(END_MARKER) {
        Some(UserTurn::End)
    } else {
        Some(UserTurn::Utterance(body))
    }
}

#[derive(Clone)]
pub struct UserSimulator {
    pub backend: Arc<dyn LlmBackend>,
    pub profile: UserProfile,
    pub assistant_description: String,
    pub params: CompletionParams,
}

impl std::fmt::Debug for UserSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserSimulator")
            .field("backend", &self.backend.identity())
            .finish_non_exhaustive()
    }
}

impl UserSimulator {
    pub fn new(backend: Arc<dyn LlmBackend>, profile: UserProfile, assistant_description: impl Into<String>) -> Self {
        Self {
            backend,
            profile,
            assistant_description: assistant_description.into(),
            params: CompletionParams {
                temperature: 0.7,
                ..CompletionParams::default()
            },
        }
    }

    /// Prompt for the next user turn; the user only sees the dialogue
    /// text, not tool traffic.
    pub fn prompt(&self, history: &[Action], constraint: Option<&str>) -> String {
        let visible: Vec<Action> = history
            .iter()
            .filter(|a| matches!(a, Action::UserMessage { .. } | Action::BotResponse { .. }))
            .cloned()
            .collect();
        let profile = self.profile.with_constraint(constraint);
        user_simulation_prompt(&self.assistant_description, &profile.render_for_prompt(), &visible)
    }

    /// One parse retry; a second unparseable output ends the dialogue.
    pub fn simulate_user(&self, history: &[Action], constraint: Option<&str>) -> Result<UserTurn, SimError> {
        let prompt = self.prompt(history, constraint);
        for attempt in 0..2 {
            let raw = self.backend.complete(&[Message::user(prompt.clone())], &self.params)?;
            match parse_user_output(&raw) {
                Some(t) => return Ok(t),
                None => tracing::warn!(attempt, "unparseable user simulator output"),
            }
        }
        Ok(UserTurn::End)
    }
}
