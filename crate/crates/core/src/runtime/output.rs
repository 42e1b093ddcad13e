//! Policy output formats: `Thought/Response[/Answer]` for replies and
//! `Thought/Action/Action Input` for tool calls.

use serde_json::{Map, Value};
use thiserror::Error;

use super::action::Action;
use crate::pdl::is_identifier;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse policy output: {reason}")]
pub struct ParseError {
    pub reason: String,
}

impl ParseError {
    fn new(reason: impl Into<String>) -> Self {
        Self { reason: reason.into() }
    }
}

const KEYS: [&str; 5] = ["Thought", "Response", "Answer", "Action Input", "Action"];

fn key_of(line: &str) -> Option<(&'static str, &str)> {
    let t = line.trim_start();
    KEYS.iter().find_map(|k| {
        t.strip_prefix(k)
            .and_then(|rest| rest.strip_prefix(':'))
            .map(|rest| (*k, rest))
    })
}

fn fields(text: &str) -> Result<Vec<(&'static str, String)>, ParseError> {
    let mut out: Vec<(&'static str, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        if let Some((k, rest)) = key_of(line) {
            if out.iter().any(|(seen, _)| *seen == k) {
                return Err(ParseError::new(format!("duplicate '{k}' field")));
            }
            out.push((k, vec![rest]));
        } else if let Some((_, lines)) = out.last_mut() {
            lines.push(line);
        }
    }
    Ok(out
        .into_iter()
        .map(|(k, lines)| (k, lines.join("\n").trim().to_string()))
        .collect())
}

fn strip_prefixes(name: &str) -> &str {
    let name = name.trim().trim_matches('`');
    let name = name.strip_prefix("functions.").unwrap_or(name);
    name.strip_prefix("API_").unwrap_or(name)
}

/// Parses one policy output into a `BotResponse` or `ToolCall`.
pub fn parse_llm_output(text: &str) -> Result<Action, ParseError> {
    let fields = fields(text)?;
    let get = |k: &str| fields.iter().find(|(f, _)| *f == k).map(|(_, v)| v.clone());
    let thought = get("Thought").filter(|t| !t.is_empty());
    let response = get("Response");
    let action = get("Action");

    match (response, action) {
        (Some(_), Some(_)) => Err(ParseError::new("both Response and Action present")),
        (Some(text), None) => {
            if text.is_empty() {
                return Err(ParseError::new("empty Response"));
            }
            let answer_node = match get("Answer") {
                Some(a) if a.is_empty() => None,
                Some(a) if is_identifier(&a) => Some(a),
                Some(a) => return Err(ParseError::new(format!("invalid Answer label '{a}'"))),
                None => None,
            };
            Ok(Action::BotResponse {
                text,
                answer_node,
                thought,
            })
        }
        (None, Some(name)) => {
            let name = strip_prefixes(&name).to_string();
            if !is_identifier(&name) {
                return Err(ParseError::new(format!("invalid Action name '{name}'")));
            }
            let input = get("Action Input").ok_or_else(|| ParseError::new("Action without Action Input"))?;
            let input = if input.is_empty() { "{}".to_string() } else { input };
            let value: Value = serde_json::from_str(&input)
                .map_err(|e| ParseError::new(format!("invalid JSON in Action Input: {e}")))?;
            let Value::Object(args) = value else {
                return Err(ParseError::new("Action Input must be a JSON object"));
            };
            if let Some((k, _)) = args.iter().find(|(_, v)| v.is_object() || v.is_array()) {
                return Err(ParseError::new(format!("argument '{k}' is not a scalar")));
            }
            Ok(Action::ToolCall { name, args, thought })
        }
        (None, None) => Err(ParseError::new("neither Response nor Action found")),
    }
}

/// Inverse of [`parse_llm_output`] for replies and tool calls.
pub fn render_llm_output(action: &Action) -> Option<String> {
    let mut lines = Vec::new();
    match action {
        Action::BotResponse {
            text,
            answer_node,
            thought,
        } => {
            if let Some(t) = thought {
                lines.push(format!("Thought: {t}"));
            }
            lines.push(format!("Response: {text}"));
            if let Some(a) = answer_node {
                lines.push(format!("Answer: {a}"));
            }
        }
        Action::ToolCall { name, args, thought } => {
            if let Some(t) = thought {
                lines.push(format!("Thought: {t}"));
            }
            lines.push(format!("Action: {name}"));
            lines.push(format!(
                "Action Input: {}",
                serde_json::to_string(&Value::Object(Map::clone(args))).expect("serializable")
            ));
        }
        _ => return None,
    }
    Some(lines.join("\n"))
}
