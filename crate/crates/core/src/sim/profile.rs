use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Simulated-user profile. Renders to the markdown layout the user
/// simulator is prompted with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub persona: String,
    /// Ordered attribute map (name, sex, age, phone, id number, ...).
    #[serde(default)]
    pub details: Map<String, Value>,
    #[serde(default)]
    pub needs: String,
    #[serde(default)]
    pub dialogue_style: String,
    #[serde(default)]
    pub interactive_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additional_constraints: Option<String>,
    /// API nodes the needs entail; used for task progress, never shown to
    /// the simulator.
    #[serde(default)]
    pub required_nodes: Vec<String>,
}

const PERSONA: &str = "Persona";
const DETAILS: &str = "User Details";
const NEEDS: &str = "User Needs";
const STYLE: &str = "Dialogue Style";
const PATTERN: &str = "Interactive Pattern";
const CONSTRAINTS: &str = "Additional Constraints";
const REQUIRED: &str = "Required Nodes";

fn detail_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl UserProfile {
    /// Markdown shown to the user simulator.
    pub fn render_for_prompt(&self) -> String {
        let mut sections: Vec<(&str, String)> = vec![(PERSONA, self.persona.clone())];
        let mut details = String::new();
        for (i, (k, v)) in self.details.iter().enumerate() {
            if i > 0 {
                details.push('\n');
            }
            let _ = write!(details, "- {k}: {}  ", detail_text(v));
        }
        sections.push((DETAILS, details));
        sections.push((NEEDS, self.needs.clone()));
        sections.push((STYLE, self.dialogue_style.clone()));
        sections.push((PATTERN, self.interactive_pattern.clone()));
        if let Some(c) = &self.additional_constraints {
            sections.push((CONSTRAINTS, c.clone()));
        }
        render_sections(&sections)
    }

    /// Full markdown, including the evaluation-only required nodes.
    pub fn to_markdown(&self) -> String {
        let mut text = self.render_for_prompt();
        if !self.required_nodes.is_empty() {
            let list: Vec<String> = self.required_nodes.iter().map(|n| format!("- {n}")).collect();
            text.push_str("\n\n");
            text.push_str(&render_sections(&[(REQUIRED, list.join("\n"))]));
        }
        text
    }

    pub fn with_constraint(&self, constraint: Option<&str>) -> Self {
        let mut p = self.clone();
        if let Some(c) = constraint {
            p.additional_constraints = Some(c.to_string());
        }
        p
    }

    /// Parses the markdown layout produced by [`UserProfile::to_markdown`].
    pub fn from_markdown(text: &str) -> Result<Self, String> {
        let mut p = UserProfile::default();
        let mut current: Option<(String, Vec<&str>)> = None;
        let mut sections: Vec<(String, String)> = Vec::new();
        let flush = |cur: &mut Option<(String, Vec<&str>)>, out: &mut Vec<(String, String)>| {
            if let Some((name, lines)) = cur.take() {
                let mut lines = lines;
                while lines.last().is_some_and(|l| l.trim().is_empty()) {
                    lines.pop();
                }
                out.push((name, lines.join("\n")));
            }
        };
        for line in text.lines() {
            let t = line.trim_end();
            if let Some(name) = t.strip_prefix("**").and_then(|r| r.strip_suffix("**:")) {
                flush(&mut current, &mut sections);
                current = Some((name.to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !t.is_empty() {
                return Err(format!("text before the first section: '{t}'"));
            }
        }
        flush(&mut current, &mut sections);
        for (name, body) in sections {
            match name.as_str() {
                PERSONA => p.persona = body,
                DETAILS => {
                    for line in body.lines() {
                        let item = line.trim().trim_start_matches('-').trim();
                        if item.is_empty() {
                            continue;
                        }
                        let (k, v) = item
                            .split_once(':')
                            .ok_or_else(|| format!("detail line without ':': '{line}'"))?;
                        p.details.insert(k.trim().to_string(), Value::String(v.trim().to_string()));
                    }
                }
                NEEDS => p.needs = body,
                STYLE => p.dialogue_style = body,
                PATTERN => p.interactive_pattern = body,
                CONSTRAINTS => p.additional_constraints = Some(body),
                REQUIRED => {
                    p.required_nodes = body
                        .lines()
                        .map(|l| l.trim().trim_start_matches('-').trim().to_string())
                        .filter(|l| !l.is_empty())
                        .collect()
                }
                other => return Err(format!("unknown profile section '{other}'")),
            }
        }
        Ok(p)
    }

    /// Loads a `.json` profile or a markdown profile.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        } else {
            Self::from_markdown(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
    }
}

fn render_sections(sections: &[(&str, String)]) -> String {
    sections
        .iter()
        .map(|(name, body)| format!("**{name}**:  \n{body}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}
