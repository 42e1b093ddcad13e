//! LLM judges for single turns and whole sessions.

use serde::{Deserialize, Serialize};

use crate::runtime::backend::{BackendError, CompletionParams, LlmBackend, Message};
use crate::runtime::prompt::{session_judge_prompt, turn_judge_prompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JudgeScores {
    pub correctness: Option<u32>,
    pub helpfulness: Option<u32>,
    pub humanness: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnJudgement {
    pub scores: JudgeScores,
    pub consistent: bool,
    /// Set when the judge could not be parsed and the turn was marked
    /// inconsistent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionJudgement {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let l = l.trim().trim_start_matches(['*', '-', ' ']);
        l.strip_prefix(key)
            .and_then(|r| r.trim_start().strip_prefix(':'))
            .map(|r| r.trim().trim_matches('*').trim())
    })
}

fn yes_no(v: &str) -> Option<bool> {
    let w = v.split(|c: char| !c.is_alphabetic()).next().unwrap_or("");
    match w.to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn score(text: &str, key: &str) -> Option<u32> {
    let v = field(text, key)?;
    let digits: String = v.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Parses the turn-judge reply. Only the consistency line is required.
pub fn parse_turn_judgement(text: &str) -> Option<TurnJudgement> {
    let consistent = yes_no(field(text, "Consistency")?)?;
    Some(TurnJudgement {
        scores: JudgeScores {
            correctness: score(text, "Correctness Score"),
            helpfulness: score(text, "Helpfulness Score"),
            humanness: score(text, "Humanness Score"),
        },
        consistent,
        error: None,
    })
}

pub fn parse_session_judgement(text: &str) -> Option<SessionJudgement> {
    let success = yes_no(field(text, "Success")?)?;
    Some(SessionJudgement {
        success,
        reason: field(text, "Reason").map(str::to_string),
        error: None,
    })
}

fn params() -> CompletionParams {
    CompletionParams {
        temperature: 0.0,
        ..CompletionParams::default()
    }
}

/// Asks twice at most; returns the parsed value or the last failure text.
fn ask<T>(judge: &dyn LlmBackend, prompt: String, parse: impl Fn(&str) -> Option<T>) -> Result<T, String> {
    let mut last = String::new();
    for attempt in 0..2 {
        match judge.complete(&[Message::user(prompt.clone())], &params()) {
            Ok(raw) => match parse(&raw) {
                Some(v) => return Ok(v),
                None => last = format!("unparseable judge output: {}", raw.trim()),
            },
            Err(e) => last = format!("judge backend failed: {e}"),
        }
        tracing::warn!(attempt, error = %last, "judge retry");
    }
    Err(last)
}

pub fn judge_turn(
    workflow_info: &str,
    prefix: &str,
    reference_response: &str,
    predicted_response: &str,
    judge: &dyn LlmBackend,
) -> TurnJudgement {
    let prompt = turn_judge_prompt(workflow_info, prefix, reference_response, predicted_response);
    ask(judge, prompt, parse_turn_judgement).unwrap_or_else(|e| TurnJudgement {
        scores: JudgeScores::default(),
        consistent: false,
        error: Some(e),
    })
}

pub fn judge_session_success(
    workflow_info: &str,
    user_profile: &str,
    session: &str,
    judge: &dyn LlmBackend,
) -> SessionJudgement {
    let prompt = session_judge_prompt(workflow_info, user_profile, session);
    ask(judge, prompt, parse_session_judgement).unwrap_or_else(|e| SessionJudgement {
        success: false,
        reason: None,
        error: Some(e),
    })
}

const REFERENCE_MARKER: &str = "Here is the true value response from the reference: \n";
const PREDICTED_MARKER: &str = "\nHere is the generated response from the assistant: \n";
const PREDICTED_END: &str = "\n\n\nPlease reply with the scores";

/// Deterministic turn judge: consistent iff the predicted response equals
/// the reference after whitespace normalization. Reads both out of the
/// rendered judge prompt.
#[derive(Debug, Clone, Default)]
pub struct ExactMatchJudge;

impl ExactMatchJudge {
    fn sections(prompt: &str) -> Option<(&str, &str)> {
        let r0 = prompt.find(REFERENCE_MARKER)? + REFERENCE_MARKER.len();
        let p_at = r0 + prompt[r0..].find(PREDICTED_MARKER)?;
        let p0 = p_at + PREDICTED_MARKER.len();
        let p1 = p0 + prompt[p0..].find(PREDICTED_END)?;
        Some((&prompt[r0..p_at], &prompt[p0..p1]))
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl LlmBackend for ExactMatchJudge {
    fn complete(&self, messages: &[Message], _params: &CompletionParams) -> Result<String, BackendError> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let (r, p) = Self::sections(prompt)
            .ok_or_else(|| BackendError::Malformed("not a turn-judge prompt".into()))?;
        let same = normalize(r) == normalize(p);
        let s = if same { 10 } else { 2 };
        Ok(format!(
            "Correctness Score: {s}\nHelpfulness Score: {s}\nHumanness Score: {s}\nConsistency: {}",
            if same { "Yes" } else { "No" }
        ))
    }

    fn identity(&self) -> String {
        "exact-match-judge".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::backend::ScriptedBackend;

    #[test]
    fn parses_judge_format() {
        let j = parse_turn_judgement(
            "```\nCorrectness Score: 9\nHelpfulness Score: 8\nHumanness Score: 10\nConsistency: Yes\n```",
        )
        .unwrap();
        assert!(j.consistent);
        assert_eq!(j.scores.correctness, Some(9));
        assert_eq!(j.scores.humanness, Some(10));
        assert!(!parse_turn_judgement("Consistency: No").unwrap().consistent);
        assert!(parse_turn_judgement("Correctness Score: 9").is_none());
        assert!(parse_turn_judgement("Consistency: maybe").is_none());
    }

    #[test]
    fn turn_judge_retries_once_then_marks_inconsistent() {
        let b = ScriptedBackend::new(vec!["??".into(), "Consistency: Yes".into()]);
        assert!(judge_turn("w", "p", "r", "x", &b).consistent);
        let b = ScriptedBackend::new(vec!["??".into(), "still ??".into(), "Consistency: Yes".into()]);
        let j = judge_turn("w", "p", "r", "x", &b);
        assert!(!j.consistent);
        assert!(j.error.is_some());
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn session_judge() {
        let b = ScriptedBackend::new(vec!["Reason: booked\nSuccess: Yes".into()]);
        let j = judge_session_success("w", "u", "s", &b);
        assert!(j.success);
        assert_eq!(j.reason.as_deref(), Some("booked"));
        let b = ScriptedBackend::new(vec![]);
        let j = judge_session_success("w", "u", "s", &b);
        assert!(!j.success && j.error.is_some());
    }

    #[test]
    fn exact_match_judge_reads_the_rendered_prompt() {
        let yes = judge_turn("w", "p", "Hello  there.", "Hello there.", &ExactMatchJudge);
        assert!(yes.consistent);
        let no = judge_turn("w", "p", "Hello there.", "Goodbye.", &ExactMatchJudge);
        assert!(!no.consistent);
        assert_eq!(no.scores.correctness, Some(2));
    }
}
