//! Maps a free-text bot response to the ANSWER node it realizes.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::backend::{CompletionParams, LlmBackend, Message};
use crate::pdl::PdlDocument;

#[derive(Clone, Default)]
pub enum Labeler {
    /// Only explicit `Answer:` labels are used.
    #[default]
    ExplicitOnly,
    /// Token overlap against answer templates. A template matches when the
    /// longest shared contiguous run of tokens is at least `min_run`.
    TemplateOverlap { min_run: usize },
    /// Asks a model to pick a node name or `none`.
    Llm(Arc<dyn LlmBackend>),
}

impl std::fmt::Debug for Labeler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Labeler::ExplicitOnly => f.write_str("ExplicitOnly"),
            Labeler::TemplateOverlap { min_run } => write!(f, "TemplateOverlap({min_run})"),
            Labeler::Llm(b) => write!(f, "Llm({})", b.identity()),
        }
    }
}

impl Labeler {
    pub fn template_overlap() -> Self {
        Labeler::TemplateOverlap { min_run: 6 }
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Template split at placeholders into literal token runs.
fn template_segments(template: &str) -> Vec<Vec<String>> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '$' {
            segments.push(tokens(&current));
            current.clear();
            while chars
                .peek()
                .is_some_and(|d| d.is_alphanumeric() || *d == '_' || *d == '-')
            {
                chars.next();
            }
        } else {
            current.push(c);
        }
    }
    segments.push(tokens(&current));
    segments.retain(|s| !s.is_empty());
    segments
}

fn longest_common_run(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            if x == y {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

/// (longest run, token recall) of a response against one template.
fn overlap(response: &[String], template: &str) -> (usize, f64) {
    let segments = template_segments(template);
    let run = segments
        .iter()
        .map(|s| longest_common_run(s, response))
        .max()
        .unwrap_or(0);
    let words: BTreeSet<&String> = segments.iter().flatten().collect();
    let present: BTreeSet<&String> = response.iter().collect();
    let recall = if words.is_empty() {
        0.0
    } else {
        words.iter().filter(|w| present.contains(*w)).count() as f64 / words.len() as f64
    };
    (run, recall)
}

/// Returns the ANSWER node `response_text` realizes, or `None` below the
/// confidence threshold. Ties go to the node declared first.
pub fn label_answer_node(response_text: &str, doc: &PdlDocument, labeler: &Labeler) -> Option<String> {
    match labeler {
        Labeler::ExplicitOnly => None,
        Labeler::TemplateOverlap { min_run } => {
            let resp = tokens(response_text);
            let mut best: Option<(&str, usize, f64)> = None;
            for node in &doc.answer_nodes {
                let Some(t) = node.desc.as_deref() else { continue };
                let (run, recall) = overlap(&resp, t);
                if run < *min_run {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, r, rc)) => run > r || (run == r && recall > rc),
                };
                if better {
                    best = Some((&node.name, run, recall));
                }
            }
            if best.is_none() {
                tracing::debug!("no answer node matched; dependency check skipped");
            }
            best.map(|(n, _, _)| n.to_string())
        }
        Labeler::Llm(backend) => {
            let mut prompt = String::from(
                "Classify the assistant response into one of the answer types below. Reply with the answer name only, or `none` if no type fits.\n\n",
            );
            for n in &doc.answer_nodes {
                prompt.push_str(&format!("- {}: {}\n", n.name, n.desc.as_deref().unwrap_or("")));
            }
            prompt.push_str(&format!("\nResponse: {response_text}\nAnswer:"));
            let out = backend
                .complete(&[Message::user(prompt)], &CompletionParams::default())
                .ok()?;
            let name = out.trim().trim_start_matches("Answer:").trim().trim_matches('`').to_string();
            doc.answer(&name).map(|n| n.name.clone())
        }
    }
}
