//! Dialogue runtime: actions, session state, backends, tools, prompts and
//! the per-turn decision loop.

pub mod action;
pub mod agent;
pub mod backend;
pub mod labeler;
#[cfg(feature = "http-backend")]
pub mod openai;
pub mod output;
pub mod prompt;
pub mod registry;
pub mod state;

pub use action::{render_transcript, Action, OowAnnotation, OowKind};
pub use agent::{Admission, Agent, AgentKind, Attempt, StepError, TurnOutcome};
pub use backend::{BackendError, CompletionParams, FnBackend, LlmBackend, Message, Role, ScriptedBackend};
pub use labeler::{label_answer_node, Labeler};
pub use output::{parse_llm_output, render_llm_output, ParseError};
pub use registry::{canonical_args, ToolError, ToolRegistry, ToolSpec};
pub use state::{ClockMode, Event, Session, SessionState};
