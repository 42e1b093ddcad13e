use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f32,
    pub max_tokens: Option<u32>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("scripted backend exhausted after {0} responses")]
    Exhausted(usize),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A text-completion capability. Implementations are shared across
/// sessions, so they must be `Send + Sync`.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, messages: &[Message], params: &CompletionParams) -> Result<String, BackendError>;

    fn identity(&self) -> String;
}

/// Replays a fixed list of outputs in order, ignoring the prompt.
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    responses: Vec<String>,
    repeat_last: bool,
    cursor: AtomicUsize,
}

/// On-disk form: a bare array of strings, or an object with options.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    List(Vec<String>),
    Full {
        responses: Vec<String>,
        #[serde(default)]
        repeat_last: bool,
    },
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            name: "scripted".into(),
            responses,
            repeat_last: false,
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn repeat_last(mut self, yes: bool) -> Self {
        self.repeat_last = yes;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn parse_script(text: &str) -> Result<(Vec<String>, bool), BackendError> {
        match serde_json::from_str::<ScriptFile>(text) {
            Ok(ScriptFile::List(r)) => Ok((r, false)),
            Ok(ScriptFile::Full {
                responses,
                repeat_last,
            }) => Ok((responses, repeat_last)),
            Err(e) => Err(BackendError::Config(format!("invalid script: {e}"))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let (responses, repeat) = Self::parse_script(&text)?;
        Ok(Self::new(responses).repeat_last(repeat))
    }

    /// Number of outputs handed out so far.
    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, _messages: &[Message], _params: &CompletionParams) -> Result<String, BackendError> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        match self.responses.get(i) {
            Some(r) => Ok(r.clone()),
            None if self.repeat_last && !self.responses.is_empty() => {
                Ok(self.responses.last().expect("non-empty").clone())
            }
            None => Err(BackendError::Exhausted(self.responses.len())),
        }
    }

    fn identity(&self) -> String {
        self.name.clone()
    }
}

/// Backend built from a closure over the prompt text; handy for reactive
/// test doubles.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, messages: &[Message], _params: &CompletionParams) -> Result<String, BackendError> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        (self.f)(prompt)
    }

    fn identity(&self) -> String {
        self.name.clone()
    }
}
