//! Turn- and session-level evaluation and metric aggregation.

pub mod judge;
pub mod metrics;
pub mod reference;
pub mod session;
pub mod turn;

pub use judge::{judge_turn, ExactMatchJudge, JudgeScores, SessionJudgement, TurnJudgement};
pub use metrics::{compute_metrics, markdown_table, MetricsReport, MetricsSummary, SessionRecord, SlotItem, Split, TurnRecord};
pub use reference::{ReferenceSession, ReferenceTurn, TurnRole};
pub use session::{judge_session, task_progress};
pub use turn::{echo_script, evaluate_turn};
