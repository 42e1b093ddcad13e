//! Reference sessions and persisted transcripts: one turn per JSONL line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::runtime::action::{render_transcript, Action, OowAnnotation, CALL_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnRole {
    #[serde(rename = "USER")]
    User,
    #[serde(rename = "BOT")]
    Bot,
    #[serde(rename = "SYSTEM")]
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRef {
    pub name: String,
    pub args: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTurn {
    pub role: TurnRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCallRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oow_annotation: Option<OowAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_node: Option<String>,
    /// Tool result payload on SYSTEM turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("turn {turn}: {message}")]
    Invalid { turn: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSession {
    pub turns: Vec<ReferenceTurn>,
}

impl ReferenceSession {
    /// Conversation turns for a list of actions; feedback and session-end
    /// markers are dropped.
    pub fn from_actions<'a>(actions: impl IntoIterator<Item = &'a Action>) -> Self {
        let mut turns = Vec::new();
        for a in actions {
            let Some(text) = a.transcript_text() else { continue };
            let mut t = ReferenceTurn {
                role: TurnRole::Bot,
                text,
                tool_call: None,
                oow_annotation: None,
                answer_node: None,
                payload: None,
                success: None,
            };
            match a {
                Action::UserMessage { oow, .. } => {
                    t.role = TurnRole::User;
                    t.oow_annotation = oow.clone();
                }
                Action::BotResponse { answer_node, .. } => t.answer_node = answer_node.clone(),
                Action::ToolCall { name, args, .. } => {
                    t.tool_call = Some(ToolCallRef {
                        name: name.clone(),
                        args: args.clone(),
                    })
                }
                Action::ToolResult { payload, success, .. } => {
                    t.role = TurnRole::System;
                    t.payload = Some(payload.clone());
                    t.success = Some(*success);
                }
                Action::ControllerFeedback { .. } | Action::SessionEnd { .. } => unreachable!(),
            }
            turns.push(t);
        }
        Self { turns }
    }

    /// Inverse of [`ReferenceSession::from_actions`]. A SYSTEM turn takes
    /// its tool name from the preceding call.
    pub fn to_actions(&self) -> Vec<Action> {
        let mut out = Vec::with_capacity(self.turns.len());
        let mut last_tool = String::new();
        for t in &self.turns {
            let a = match (t.role, &t.tool_call) {
                (TurnRole::User, _) => Action::UserMessage {
                    text: t.text.clone(),
                    oow: t.oow_annotation.clone(),
                },
                (TurnRole::Bot, Some(c)) => {
                    last_tool = c.name.clone();
                    Action::tool_call(c.name.clone(), c.args.clone())
                }
                (TurnRole::Bot, None) => Action::BotResponse {
                    text: t.text.clone(),
                    answer_node: t.answer_node.clone(),
                    thought: None,
                },
                (TurnRole::System, _) => Action::ToolResult {
                    name: last_tool.clone(),
                    payload: t.payload.clone().unwrap_or_else(|| Value::String(t.text.clone())),
                    success: t.success.unwrap_or(true),
                },
            };
            out.push(a);
        }
        out
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        for (i, t) in self.turns.iter().enumerate() {
            let bad = |message: &str| {
                Err(ReferenceError::Invalid {
                    turn: i,
                    message: message.to_string(),
                })
            };
            if t.oow_annotation.is_some() && t.role != TurnRole::User {
                return bad("OOW annotations are only allowed on USER turns");
            }
            if t.tool_call.is_some() && t.role != TurnRole::Bot {
                return bad("only BOT turns carry tool calls");
            }
            if t.role == TurnRole::Bot && t.tool_call.is_none() && t.text.trim_start().starts_with(CALL_MARKER) {
                return bad("tool-call turn without a parsable tool_call");
            }
        }
        Ok(())
    }

    pub fn bot_turn_indices(&self) -> Vec<usize> {
        (0..self.turns.len())
            .filter(|&i| self.turns[i].role == TurnRole::Bot)
            .collect()
    }

    /// `USER:` / `BOT:` / `SYSTEM:` text with OOW annotation lines.
    pub fn render_text(&self) -> String {
        render_transcript(&self.to_actions(), true)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.turns {
            out.push_str(&serde_json::to_string(t).expect("turn serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ReferenceError> {
        let mut turns = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t = serde_json::from_str(line).map_err(|e| ReferenceError::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            turns.push(t);
        }
        let s = Self { turns };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ReferenceError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReferenceError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Parses the plain transcript form, including `<Call API>` lines with
    /// python-literal arguments and `(OOW type)` annotation lines. A
    /// leading `...` line marks an elided prefix and is skipped.
    pub fn from_text(text: &str) -> Result<Self, ReferenceError> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| ReferenceError::Line { line: line_no, message };
            let line = raw.trim_end();
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed == "..." {
                continue;
            }
            if let Some(ann) = trimmed.strip_prefix("(OOW type)") {
                let a = OowAnnotation::parse(ann.trim()).ok_or_else(|| err(format!("bad OOW annotation '{ann}'")))?;
                match s.turns.last_mut() {
                    Some(t) if t.role == TurnRole::User => t.oow_annotation = Some(a),
                    _ => return Err(err("OOW annotation must follow a USER turn".into())),
                }
                continue;
            }
            let (role, body) = if let Some(b) = line.strip_prefix("USER:") {
                (TurnRole::User, b)
            } else if let Some(b) = line.strip_prefix("BOT:") {
                (TurnRole::Bot, b)
            } else if let Some(b) = line.strip_prefix("SYSTEM:") {
                (TurnRole::System, b)
            } else {
                return Err(err(format!("unrecognized line '{line}'")));
            };
            let body = body.trim().to_string();
            let mut t = ReferenceTurn {
                role,
                text: body.clone(),
                tool_call: None,
                oow_annotation: None,
                answer_node: None,
                payload: None,
                success: None,
            };
            match role {
                TurnRole::Bot if body.starts_with(CALL_MARKER) => {
                    t.tool_call = Some(parse_call(&body).map_err(err)?);
                }
                TurnRole::System => {
                    t.payload = Some(parse_python_literal(&body).unwrap_or(Value::String(body.clone())));
                    t.success = Some(true);
                }
                _ => {}
            }
            s.turns.push(t);
        }
        s.validate()?;
        Ok(s)
    }
}

fn parse_call(body: &str) -> Result<ToolCallRef, String> {
    let rest = body[CALL_MARKER.len()..].trim();
    let open = rest.find('(').ok_or("missing '(' in tool call")?;
    let name = rest[..open].trim().to_string();
    let inner = rest[open + 1..]
        .strip_suffix(')')
        .ok_or("missing ')' in tool call")?
        .trim();
    let args = if inner.is_empty() {
        Map::new()
    } else {
        match parse_python_literal(inner)? {
            Value::Object(m) => m,
            _ => return Err("tool call arguments must be a dict".into()),
        }
    };
    Ok(ToolCallRef { name, args })
}

/// Parses a python literal made of dicts, lists, strings, numbers,
/// `True`, `False` and `None`.
pub fn parse_python_literal(text: &str) -> Result<Value, String> {
    let mut p = PyParser {
        chars: text.chars().collect(),
        pos: 0,
    };
    let v = p.value()?;
    p.ws();
    if p.pos != p.chars.len() {
        return Err(format!("trailing input at offset {}", p.pos));
    }
    Ok(v)
}

struct PyParser {
    chars: Vec<char>,
    pos: usize,
}

impl PyParser {
    fn ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        self.ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!("expected '{c}' at offset {}", self.pos))
        }
    }

    fn value(&mut self) -> Result<Value, String> {
        self.ws();
        match self.peek() {
            Some('{') => {
                self.pos += 1;
                let mut m = Map::new();
                loop {
                    self.ws();
                    if self.peek() == Some('}') {
                        self.pos += 1;
                        return Ok(Value::Object(m));
                    }
                    let k = match self.value()? {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    self.expect(':')?;
                    let v = self.value()?;
                    m.insert(k, v);
                    self.ws();
                    if self.peek() == Some(',') {
                        self.pos += 1;
                    }
                }
            }
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.ws();
                    if self.peek() == Some(']') {
                        self.pos += 1;
                        return Ok(Value::Array(items));
                    }
                    items.push(self.value()?);
                    self.ws();
                    if self.peek() == Some(',') {
                        self.pos += 1;
                    }
                }
            }
            Some(q @ ('\'' | '"')) => {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => return Err("unterminated string".into()),
                        Some(c) if c == q => {
                            self.pos += 1;
                            return Ok(Value::String(s));
                        }
                        Some('\\') => {
                            self.pos += 1;
                            let e = self.peek().ok_or("dangling escape")?;
                            self.pos += 1;
                            s.push(match e {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                        }
                        Some(c) => {
                            self.pos += 1;
                            s.push(c);
                        }
                    }
                }
            }
            Some(_) => {
                let start = self.pos;
                while self
                    .peek()
                    .is_some_and(|c| c.is_alphanumeric() || matches!(c, '.' | '-' | '+' | '_'))
                {
                    self.pos += 1;
                }
                let word: String = self.chars[start..self.pos].iter().collect();
                match word.as_str() {
                    "True" => Ok(Value::Bool(true)),
                    "False" => Ok(Value::Bool(false)),
                    "None" => Ok(Value::Null),
                    w => {
                        if let Ok(i) = w.parse::<i64>() {
                            Ok(Value::Number(i.into()))
                        } else if let Some(n) = w.parse::<f64>().ok().and_then(Number::from_f64) {
                            Ok(Value::Number(n))
                        } else {
                            Err(format!("unexpected token '{w}' at offset {start}"))
                        }
                    }
                }
            }
            None => Err("unexpected end of input".into()),
        }
    }
}
