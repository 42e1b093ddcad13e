//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{BackendError, CompletionParams, LlmBackend, Message};

pub const DEFAULT_BASE_URL_ENV: &str = "PDL_AGENT_BASE_URL";
pub const DEFAULT_API_KEY_ENV: &str = "PDL_AGENT_API_KEY";

#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    base_url: String,
    api_key: Option<String>,
    model: String,
    max_attempts: usize,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            max_attempts: 2,
            agent: config.into(),
        }
    }

    /// Reads the base URL and API key from the named environment variables.
    pub fn from_env(base_url_env: &str, api_key_env: &str, model: &str) -> Result<Self, BackendError> {
        let base = std::env::var(base_url_env)
            .map_err(|_| BackendError::Config(format!("environment variable {base_url_env} is not set")))?;
        Ok(Self::new(base, std::env::var(api_key_env).ok(), model))
    }

    pub fn with_max_attempts(mut self, n: usize) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    fn request_body(&self, messages: &[Message], params: &CompletionParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
        });
        if let Some(m) = params.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(BackendError::Status { status, body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }
}

fn retriable(e: &BackendError) -> bool {
    match e {
        BackendError::Transport(_) => true,
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl LlmBackend for OpenAiBackend {
    fn complete(&self, messages: &[Message], params: &CompletionParams) -> Result<String, BackendError> {
        let body = self.request_body(messages, params);
        let mut last = None;
        for attempt in 0..self.max_attempts {
            match self.attempt(&body) {
                Ok(t) => return Ok(t),
                Err(e) if retriable(&e) => {
                    tracing::warn!(attempt, error = %e, "backend call failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn identity(&self) -> String {
        self.model.clone()
    }
}
