//! TOML run configuration: named backends plus defaults for the agent,
//! the simulated user and the judges.
//!
//! ```toml
//! [backends.policy]
//! kind = "scripted"
//! path = "policy.json"
//!
//! [backends.gpt]
//! kind = "openai"
//! model = "gpt-4o"
//! base_url_env = "PDL_AGENT_BASE_URL"   # default
//! api_key_env = "PDL_AGENT_API_KEY"     # default
//!
//! [agent]
//! backend = "policy"
//! tools = "tools.json"
//!
//! [controllers]
//! max_total_turns = 20
//! ```
//!
//! Relative paths resolve against the config file's directory. Besides
//! the configured names, `exact-match` (a deterministic turn judge) and
//! `scripted:<path>` are always available.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::ControllerConfig;
use crate::eval::judge::ExactMatchJudge;
use crate::runtime::backend::{LlmBackend, ScriptedBackend};
use crate::runtime::labeler::Labeler;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("unknown backend '{0}'")]
    UnknownBackend(String),
    #[error("backend '{name}': {message}")]
    Backend { name: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn default_base_env() -> String {
    "PDL_AGENT_BASE_URL".into()
}

fn default_key_env() -> String {
    "PDL_AGENT_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Scripted {
        path: PathBuf,
        #[serde(default)]
        repeat_last: Option<bool>,
    },
    Openai {
        model: String,
        #[serde(default = "default_base_env")]
        base_url_env: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default)]
        max_attempts: Option<usize>,
    },
    ExactMatch,
}

impl BackendSpec {
    /// A fresh instance; scripted backends restart from their first line.
    pub fn instantiate(&self, name: &str) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        let fail = |message: String| ConfigError::Backend {
            name: name.to_string(),
            message,
        };
        match self {
            BackendSpec::Scripted { path, repeat_last } => {
                let mut b = ScriptedBackend::from_file(path).map_err(|e| fail(e.to_string()))?;
                if let Some(r) = repeat_last {
                    b = b.repeat_last(*r);
                }
                Ok(Arc::new(b.named(format!("scripted:{name}"))))
            }
            BackendSpec::ExactMatch => Ok(Arc::new(ExactMatchJudge)),
            #[cfg(feature = "http-backend")]
            BackendSpec::Openai {
                model,
                base_url_env,
                api_key_env,
                max_attempts,
            } => {
                let mut b = crate::runtime::openai::OpenAiBackend::from_env(base_url_env, api_key_env, model)
                    .map_err(|e| fail(e.to_string()))?;
                if let Some(n) = max_attempts {
                    b = b.with_max_attempts(*n);
                }
                Ok(Arc::new(b))
            }
            #[cfg(not(feature = "http-backend"))]
            BackendSpec::Openai { .. } => Err(fail("built without the http-backend feature".into())),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let BackendSpec::Scripted { path, .. } = self {
            *path = resolve(base, path);
        }
    }

    pub fn identity(&self, name: &str) -> String {
        match self {
            BackendSpec::Scripted { .. } => format!("scripted:{name}"),
            BackendSpec::Openai { model, .. } => format!("openai:{model}"),
            BackendSpec::ExactMatch => "exact-match-judge".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelerKind {
    #[default]
    Explicit,
    TemplateOverlap,
}

impl LabelerKind {
    pub fn build(self) -> Labeler {
        match self {
            LabelerKind::Explicit => Labeler::ExplicitOnly,
            LabelerKind::TemplateOverlap => Labeler::template_overlap(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub kind: Option<String>,
    pub backend: Option<String>,
    pub tools: Option<PathBuf>,
    pub labeler: LabelerKind,
    pub current_time: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserSection {
    pub backend: Option<String>,
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    pub turn: Option<String>,
    pub session: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub max_user_turns: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backends: BTreeMap<String, BackendSpec>,
    pub agent: AgentSection,
    pub user: UserSection,
    pub judge: JudgeSection,
    pub simulation: SimulationSection,
    /// Overrides the agent kind's default controller setup when present.
    pub controllers: Option<ControllerConfig>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Config {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for spec in cfg.backends.values_mut() {
            spec.resolve(base);
        }
        for p in [&mut cfg.agent.tools, &mut cfg.user.profile].into_iter().flatten() {
            *p = resolve(base, p);
        }
        if let Some(c) = &cfg.controllers {
            c.validate().map_err(ConfigError::Invalid)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Looks up a named backend, or one of the built-in pseudo-names.
    pub fn backend_spec(&self, name: &str) -> Result<BackendSpec, ConfigError> {
        if let Some(s) = self.backends.get(name) {
            return Ok(s.clone());
        }
        if name == "exact-match" {
            return Ok(BackendSpec::ExactMatch);
        }
        if let Some(path) = name.strip_prefix("scripted:") {
            return Ok(BackendSpec::Scripted {
                path: PathBuf::from(path),
                repeat_last: None,
            });
        }
        Err(ConfigError::UnknownBackend(name.to_string()))
    }

    pub fn backend(&self, name: &str) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        self.backend_spec(name)?.instantiate(name)
    }
}
