use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Out-of-workflow behaviour categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OowKind {
    IntentSwitching,
    ProcedureJumping,
    IrrelevantAnswering,
}

impl OowKind {
    pub const ALL: [OowKind; 3] = [
        OowKind::IntentSwitching,
        OowKind::ProcedureJumping,
        OowKind::IrrelevantAnswering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OowKind::IntentSwitching => "intent_switching",
            OowKind::ProcedureJumping => "procedure_jumping",
            OowKind::IrrelevantAnswering => "irrelevant_answering",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL.into_iter().find(|k| k.as_str() == norm)
    }
}

impl fmt::Display for OowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `kind[/subtype]`, e.g. `intent_switching/detail-switching`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OowAnnotation {
    pub kind: OowKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<String>,
}

impl OowAnnotation {
    pub fn new(kind: OowKind) -> Self {
        Self { kind, subtype: None }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (kind, subtype) = match s.split_once('/') {
            Some((k, sub)) => (k, Some(sub.trim().to_string()).filter(|s| !s.is_empty())),
            None => (s, None),
        };
        Some(Self {
            kind: OowKind::parse(kind)?,
            subtype,
        })
    }
}

impl fmt::Display for OowAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subtype {
            Some(s) => write!(f, "{}/{}", self.kind, s),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// One step of a dialogue. Serialized adjacently tagged as
/// `{"type": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum Action {
    UserMessage {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        oow: Option<OowAnnotation>,
    },
    BotResponse {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer_node: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thought: Option<String>,
    },
    ToolCall {
        name: String,
        args: Map<String, Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thought: Option<String>,
    },
    ToolResult {
        name: String,
        payload: Value,
        success: bool,
    },
    ControllerFeedback {
        controller_id: String,
        text: String,
    },
    SessionEnd {
        reason: String,
    },
}

impl Action {
    pub fn user(text: impl Into<String>) -> Self {
        Action::UserMessage {
            text: text.into(),
            oow: None,
        }
    }

    pub fn bot(text: impl Into<String>) -> Self {
        Action::BotResponse {
            text: text.into(),
            answer_node: None,
            thought: None,
        }
    }

    pub fn tool_call(name: impl Into<String>, args: Map<String, Value>) -> Self {
        Action::ToolCall {
            name: name.into(),
            args,
            thought: None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Action::UserMessage { .. } => "UserMessage",
            Action::BotResponse { .. } => "BotResponse",
            Action::ToolCall { .. } => "ToolCall",
            Action::ToolResult { .. } => "ToolResult",
            Action::ControllerFeedback { .. } => "ControllerFeedback",
            Action::SessionEnd { .. } => "SessionEnd",
        }
    }

    /// Feedback never enters the user-visible history.
    pub fn is_user_visible(&self) -> bool {
        !matches!(self, Action::ControllerFeedback { .. })
    }

    /// Transcript line text without its role prefix.
    pub fn transcript_text(&self) -> Option<String> {
        match self {
            Action::UserMessage { text, .. } | Action::BotResponse { text, .. } => Some(text.clone()),
            Action::ToolCall { name, args, .. } => {
                let mut s = format!("{CALL_MARKER} {name}(");
                write_python_map(&mut s, args);
                s.push(')');
                Some(s)
            }
            Action::ToolResult { payload, .. } => Some(python_repr(payload)),
            Action::ControllerFeedback { .. } | Action::SessionEnd { .. } => None,
        }
    }

    /// The workflow node this action realizes, if any.
    pub fn target_node(&self) -> Option<&str> {
        match self {
            Action::ToolCall { name, .. } => Some(name),
            Action::BotResponse {
                answer_node: Some(n),
                ..
            } => Some(n),
            _ => None,
        }
    }
}

pub const CALL_MARKER: &str = "<Call API>";

/// Python-literal rendering used in transcripts: `{'k': 'v', 'n': 2}`.
pub fn python_repr(v: &Value) -> String {
    let mut out = String::new();
    write_python(&mut out, v);
    out
}

fn write_python(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("None"),
        Value::Bool(true) => out.push_str("True"),
        Value::Bool(false) => out.push_str("False"),
        Value::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Value::String(s) => write_python_str(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_python(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => write_python_map(out, map),
    }
}

fn write_python_map(out: &mut String, map: &Map<String, Value>) {
    out.push('{');
    for (i, (k, v)) in map.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_python_str(out, k);
        out.push_str(": ");
        write_python(out, v);
    }
    out.push('}');
}

fn write_python_str(out: &mut String, s: &str) {
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
}

/// Transcript line(s) for one action, or `None` for actions that are not
/// part of the conversation text.
pub fn transcript_line(action: &Action, annotations: bool) -> Option<String> {
    let text = action.transcript_text()?;
    let mut s = match action {
        Action::UserMessage { .. } => format!("USER: {text}"),
        Action::ToolResult { .. } => format!("SYSTEM: {text}"),
        _ => format!("BOT: {text}"),
    };
    if let (true, Action::UserMessage { oow: Some(a), .. }) = (annotations, action) {
        let _ = write!(s, "\n    (OOW type) {a}");
    }
    Some(s)
}

/// Renders a history in `USER:` / `BOT:` / `SYSTEM:` form.
pub fn render_transcript(history: &[Action], annotations: bool) -> String {
    history
        .iter()
        .filter_map(|a| transcript_line(a, annotations))
        .collect::<Vec<_>>()
        .join("\n")
}
