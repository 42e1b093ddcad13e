//! Simulated conversations between a user simulator and an agent.

use serde::{Deserialize, Serialize};

use super::oow::{OowInjector, OowSpec};
use super::user::{UserSimulator, UserTurn};
use crate::eval::reference::ReferenceSession;
use crate::runtime::action::Action;
use crate::runtime::agent::{Admission, Agent};
use crate::runtime::state::{ClockMode, Event, Session};

pub const END_USER: &str = "user_end";
pub const END_TURN_CAP: &str = "turn_cap";
pub const END_USER_ERROR: &str = "user_simulator_error";
pub const END_AGENT_ERROR: &str = "agent_error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Hard cap on user turns, independent of the length controller.
    pub max_user_turns: usize,
    #[serde(default)]
    pub oow: Option<OowSpec>,
    #[serde(default)]
    pub clock: ClockMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_user_turns: 30,
            oow: None,
            clock: ClockMode::Logical,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedSession {
    pub session_id: String,
    pub events: Vec<Event>,
    pub transcript: ReferenceSession,
    pub end_reason: String,
}

impl SimulatedSession {
    pub fn actions(&self) -> Vec<Action> {
        self.events.iter().map(|e| e.action.clone()).collect()
    }

    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn session_id(seed: u64, index: usize) -> String {
    format!("s{seed}-{index:03}")
}

/// Per-session RNG seed derived from the run seed.
pub fn session_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Simulates one user turn (with any OOW instruction) and the agent's
/// reply. Returns the end reason once the session is over.
pub fn advance_turn(
    agent: &Agent,
    user: &UserSimulator,
    session: &mut Session,
    injector: Option<&mut OowInjector>,
    armed: Option<super::oow::OowFiring>,
    max_user_turns: usize,
) -> Option<String> {
    if session.state.ended {
        return Some(last_end_reason(session));
    }
    let end = |session: &mut Session, reason: &str| {
        session.emit(Action::SessionEnd { reason: reason.into() });
        Some(reason.to_string())
    };
    if agent.would_close(&session.state) {
        agent.close_for_length(session);
        return Some(last_end_reason(session));
    }
    if session.state.user_turns >= max_user_turns {
        return end(session, END_TURN_CAP);
    }
    let turn_index = session.state.user_turns + 1;
    let scheduled = injector.and_then(|inj| inj.fire(turn_index));
    let firing = armed.or(scheduled);
    let constraint = firing.as_ref().map(|f| f.instruction.as_str());
    let utterance = match user.simulate_user(&session.state.history, constraint) {
        Ok(UserTurn::Utterance(u)) => u,
        Ok(UserTurn::End) => return end(session, END_USER),
        Err(e) => {
            tracing::warn!(session = %session.state.session_id, error = %e, "user simulator failed");
            return end(session, &format!("{END_USER_ERROR}: {e}"));
        }
    };
    match agent.admit_user(session, utterance, firing.map(|f| f.annotation)) {
        Ok(Admission::Accepted) => {}
        Ok(Admission::Closed { .. }) => return Some(last_end_reason(session)),
        Err(e) => return end(session, &format!("{END_AGENT_ERROR}: {e}")),
    }
    if let Err(e) = agent.step(session) {
        return end(session, &format!("{END_AGENT_ERROR}: {e}"));
    }
    None
}

fn last_end_reason(session: &Session) -> String {
    session
        .events
        .iter()
        .rev()
        .find_map(|e| match &e.action {
            Action::SessionEnd { reason } => Some(reason.clone()),
            _ => None,
        })
        .unwrap_or_default()
}

/// Alternates user simulation and agent steps until the user ends, the
/// length controller closes the session, or the hard cap is hit.
pub fn run_session(agent: &Agent, user: &UserSimulator, cfg: &SimConfig, seed: u64, index: usize) -> SimulatedSession {
    let id = session_id(seed, index);
    let mut session = Session::new(id.clone(), agent.workflow.clone(), cfg.clock);
    let mut injector = cfg
        .oow
        .clone()
        .map(|spec| OowInjector::new(spec, session_seed(seed, index)));
    let end_reason = loop {
        if let Some(reason) = advance_turn(agent, user, &mut session, injector.as_mut(), None, cfg.max_user_turns) {
            break reason;
        }
    };
    let transcript = ReferenceSession::from_actions(session.events.iter().map(|e| &e.action));
    SimulatedSession {
        session_id: id,
        events: session.events,
        transcript,
        end_reason,
    }
}
