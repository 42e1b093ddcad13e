//! Per-turn and per-session records and their aggregation.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::judge::JudgeScores;
use crate::runtime::action::Action;

/// One `(tool, slot, value)` fact. Session-level name items leave `slot`
/// and `value` empty; zero-argument calls do too.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotItem {
    pub tool: String,
    pub slot: String,
    pub value: String,
}

impl SlotItem {
    pub fn name_only(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            slot: String::new(),
            value: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    ToolCall,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub session_id: String,
    /// Index of the BOT turn in the reference.
    pub turn_index: usize,
    pub kind: TurnKind,
    /// The latest user turn before this one carries an OOW annotation.
    pub oow: bool,
    pub consistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<JudgeScores>,
    pub reference_items: Vec<SlotItem>,
    pub predicted_items: Vec<SlotItem>,
    pub predicted: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// At least one user turn carries an OOW annotation.
    pub oow: bool,
    pub success: bool,
    pub task_progress: f64,
    pub required_nodes: Vec<String>,
    pub completed_nodes: Vec<String>,
    pub reference_items: Vec<SlotItem>,
    pub predicted_items: Vec<SlotItem>,
    pub user_turns: usize,
    pub oow_turns: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "overall")]
    Overall,
    #[serde(rename = "IW")]
    Iw,
    #[serde(rename = "OOW")]
    Oow,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Overall => "overall",
            Split::Iw => "IW",
            Split::Oow => "OOW",
        }
    }

    fn admits(self, oow: bool) -> bool {
        match self {
            Split::Overall => true,
            Split::Iw => !oow,
            Split::Oow => oow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub sessions: usize,
    pub turns: usize,
    pub oow_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub pass_rate: f64,
    pub success_rate: f64,
    pub task_progress: f64,
    pub tool_precision: f64,
    pub tool_recall: f64,
    pub tool_f1: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub overall: MetricsReport,
    pub iw: MetricsReport,
    pub oow: MetricsReport,
}

impl MetricsSummary {
    pub fn splits(&self) -> [&MetricsReport; 3] {
        [&self.overall, &self.iw, &self.oow]
    }
}

/// `num / den`, or 0 when there is nothing to divide.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Items of `predicted` also present in `reference`.
pub fn matched_items(reference: &[SlotItem], predicted: &[SlotItem]) -> usize {
    let r: BTreeSet<&SlotItem> = reference.iter().collect();
    predicted.iter().collect::<BTreeSet<_>>().intersection(&r).count()
}

fn split_report(split: Split, turns: &[TurnRecord], sessions: &[SessionRecord]) -> MetricsReport {
    let turns: Vec<&TurnRecord> = turns.iter().filter(|t| split.admits(t.oow)).collect();
    let sessions: Vec<&SessionRecord> = sessions.iter().filter(|s| split.admits(s.oow)).collect();
    let (mut tp, mut pred, mut reference) = (0, 0, 0);
    let item_lists = turns
        .iter()
        .map(|t| (&t.reference_items, &t.predicted_items))
        .chain(sessions.iter().map(|s| (&s.reference_items, &s.predicted_items)));
    for (r, p) in item_lists {
        tp += matched_items(r, p);
        pred += p.iter().collect::<BTreeSet<_>>().len();
        reference += r.iter().collect::<BTreeSet<_>>().len();
    }
    let precision = ratio(tp, pred);
    let recall = ratio(tp, reference);
    MetricsReport {
        split,
        pass_rate: ratio(turns.iter().filter(|t| t.consistent).count(), turns.len()),
        success_rate: ratio(sessions.iter().filter(|s| s.success).count(), sessions.len()),
        task_progress: mean(sessions.iter().map(|s| s.task_progress)),
        tool_precision: precision,
        tool_recall: recall,
        tool_f1: f1(precision, recall),
        counts: Counts {
            sessions: sessions.len(),
            turns: turns.len(),
            oow_turns: turns.iter().filter(|t| t.oow).count(),
        },
    }
}

/// Overall, IW and OOW reports. Tool P/R/F1 are micro-averaged over all
/// items of the admitted turn and session records.
pub fn compute_metrics(turns: &[TurnRecord], sessions: &[SessionRecord]) -> MetricsSummary {
    MetricsSummary {
        overall: split_report(Split::Overall, turns, sessions),
        iw: split_report(Split::Iw, turns, sessions),
        oow: split_report(Split::Oow, turns, sessions),
    }
}

type Column = (&'static str, fn(&MetricsReport) -> Option<f64>);

fn turn_metric(r: &MetricsReport, v: f64) -> Option<f64> {
    (r.counts.turns > 0).then_some(v)
}

fn session_metric(r: &MetricsReport, v: f64) -> Option<f64> {
    (r.counts.sessions > 0).then_some(v)
}

fn tool_metric(r: &MetricsReport, v: f64) -> Option<f64> {
    (r.counts.turns + r.counts.sessions > 0).then_some(v)
}

/// One row per agent, columns = metric x split. Metrics without any
/// records behind them print as `n/a`.
pub fn markdown_table(rows: &[(String, MetricsSummary)]) -> String {
    const METRICS: [Column; 6] = [
        ("Pass", |r| turn_metric(r, r.pass_rate)),
        ("Success", |r| session_metric(r, r.success_rate)),
        ("Progress", |r| session_metric(r, r.task_progress)),
        ("P", |r| tool_metric(r, r.tool_precision)),
        ("R", |r| tool_metric(r, r.tool_recall)),
        ("F1", |r| tool_metric(r, r.tool_f1)),
    ];
    let splits = [Split::Overall, Split::Iw, Split::Oow];
    let mut out = String::from("| Agent |");
    for s in splits {
        for (m, _) in METRICS {
            let _ = write!(out, " {m} ({}) |", s.as_str());
        }
    }
    out.push_str("\n|---|");
    for _ in 0..splits.len() * METRICS.len() {
        out.push_str("---:|");
    }
    for (name, summary) in rows {
        let _ = write!(out, "\n| {name} |");
        for report in summary.splits() {
            for (_, get) in METRICS {
                match get(report) {
                    Some(v) => {
                        let _ = write!(out, " {v:.4} |");
                    }
                    None => out.push_str(" n/a |"),
                }
            }
        }
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(consistent: bool, oow: bool) -> TurnRecord {
        TurnRecord {
            session_id: "s".into(),
            turn_index: 0,
            kind: TurnKind::Response,
            oow,
            consistent,
            scores: None,
            reference_items: vec![],
            predicted_items: vec![],
            predicted: Action::bot("x"),
            error: None,
        }
    }

    fn item(slot: &str, value: &str) -> SlotItem {
        SlotItem {
            tool: "t".into(),
            slot: slot.into(),
            value: value.into(),
        }
    }

    #[test]
    fn pass_rate_is_mean_consistency() {
        let turns: Vec<_> = [true, true, false, true].iter().map(|&c| turn(c, false)).collect();
        let m = compute_metrics(&turns, &[]);
        assert_eq!(m.overall.pass_rate, 0.75);
        assert_eq!(m.iw.counts.turns, 4);
        assert_eq!(m.oow.counts.turns, 0);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        assert_eq!(f1(0.5, 0.5), 0.5);
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert!((f1(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn slot_set_arithmetic() {
        let mut t = turn(false, false);
        t.kind = TurnKind::ToolCall;
        t.reference_items = vec![item("a", "1"), item("b", "2")];
        t.predicted_items = vec![item("a", "1"), item("c", "3")];
        let m = compute_metrics(&[t], &[]);
        assert_eq!((m.overall.tool_precision, m.overall.tool_recall), (0.5, 0.5));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let mut t = turn(false, false);
        t.reference_items = vec![item("a", "1")];
        let m = compute_metrics(&[t], &[]).overall;
        assert_eq!((m.tool_precision, m.tool_recall, m.tool_f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn markdown_has_one_row_per_agent() {
        let m = compute_metrics(&[turn(true, true)], &[]);
        let md = markdown_table(&[("flowagent".into(), m.clone()), ("react-nl".into(), m)]);
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| flowagent | 1.0000 | n/a |"));
        assert!(md.contains("Pass (OOW)"));
    }
}
