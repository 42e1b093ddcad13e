use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::action::Action;
use crate::pdl::Workflow;

/// Everything the controllers and prompt builder read about a session.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub workflow: Arc<Workflow>,
    /// User-visible actions in order; controller feedback is kept out.
    pub history: Vec<Action>,
    /// Node name -> number of successful executions.
    pub executed: BTreeMap<String, usize>,
    pub user_turns: usize,
    /// Logical clock, advanced once per recorded event.
    pub clock: u64,
    pub ended: bool,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, workflow: Arc<Workflow>) -> Self {
        Self {
            session_id: session_id.into(),
            workflow,
            history: Vec::new(),
            executed: BTreeMap::new(),
            user_turns: 0,
            clock: 0,
            ended: false,
        }
    }

    /// Applies one action to the counters and, when user-visible, appends
    /// it to the history.
    pub fn record(&mut self, action: &Action) {
        self.clock += 1;
        match action {
            Action::UserMessage { .. } => self.user_turns += 1,
            Action::ToolResult {
                name,
                success: true,
                ..
            } => *self.executed.entry(name.clone()).or_default() += 1,
            Action::BotResponse {
                answer_node: Some(n),
                ..
            } => *self.executed.entry(n.clone()).or_default() += 1,
            Action::SessionEnd { .. } => self.ended = true,
            _ => {}
        }
        if action.is_user_visible() {
            self.history.push(action.clone());
        }
    }

    /// Rebuilds a state by folding over a list of actions.
    pub fn replay<'a>(
        session_id: impl Into<String>,
        workflow: Arc<Workflow>,
        actions: impl IntoIterator<Item = &'a Action>,
    ) -> Self {
        let mut s = Self::new(session_id, workflow);
        for a in actions {
            s.record(a);
        }
        s
    }

    pub fn executed_names(&self) -> Vec<&str> {
        self.executed.keys().map(String::as_str).collect()
    }

    pub fn execution_count(&self, node: &str) -> usize {
        self.executed.get(node).copied().unwrap_or(0)
    }

    /// Executed nodes listed in the graph's topological order.
    pub fn executed_in_order(&self) -> Vec<String> {
        let order = self.workflow.graph.topological_order().unwrap_or_default();
        order
            .into_iter()
            .filter(|n| self.executed.contains_key(n))
            .collect()
    }

    /// True when the latest user-visible action is an unanswered user
    /// message.
    pub fn awaiting_response(&self) -> bool {
        matches!(self.history.last(), Some(Action::UserMessage { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// `ts` = fixed epoch + one second per event. Reproducible.
    #[default]
    Logical,
    Wall,
}

const LOGICAL_EPOCH: &str = "2024-01-01T00:00:00Z";

/// Event log record: `{seq, ts, session_id, type, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: String,
    pub session_id: String,
    #[serde(flatten)]
    pub action: Action,
}

pub type EventListener = Box<dyn Fn(&Event) + Send + Sync>;

/// A session state plus its ordered event log.
pub struct Session {
    pub state: SessionState,
    pub events: Vec<Event>,
    pub clock_mode: ClockMode,
    listener: Option<EventListener>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("state", &self.state)
            .field("events", &self.events.len())
            .field("clock_mode", &self.clock_mode)
            .finish()
    }
}

impl Session {
    pub fn new(session_id: impl Into<String>, workflow: Arc<Workflow>, clock_mode: ClockMode) -> Self {
        Self {
            state: SessionState::new(session_id, workflow),
            events: Vec::new(),
            clock_mode,
            listener: None,
        }
    }

    pub fn set_listener(&mut self, listener: EventListener) {
        self.listener = Some(listener);
    }

    fn timestamp(&self, seq: u64) -> String {
        match self.clock_mode {
            ClockMode::Logical => {
                let epoch: DateTime<Utc> = LOGICAL_EPOCH.parse().expect("valid epoch");
                (epoch + Duration::seconds(seq as i64)).to_rfc3339_opts(SecondsFormat::Secs, true)
            }
            ClockMode::Wall => Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }

    /// Records an action in the state and appends it to the event log.
    pub fn emit(&mut self, action: Action) -> &Event {
        let seq = self.events.len() as u64;
        let event = Event {
            seq,
            ts: self.timestamp(seq),
            session_id: self.state.session_id.clone(),
            action,
        };
        self.state.record(&event.action);
        if let Some(l) = &self.listener {
            l(&event);
        }
        self.events.push(event);
        self.events.last().expect("just pushed")
    }

    pub fn transcript(&self) -> &[Action] {
        &self.state.history
    }
}
