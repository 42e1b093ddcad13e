//! Batch runs on disk: simulation into a run directory, evaluation of
//! persisted transcripts and reference files, and run manifests.
//!
//! Run directory layout:
//!
//! ```text
//! manifest.json
//! workflow.pdl            copy of the workflow used
//! profile.json            simulated user profile
//! transcripts/<id>.jsonl  one turn per line
//! events/<id>.jsonl       one event per line
//! sessions.jsonl          session records (when judged)
//! report.json, report.md
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{BackendSpec, ConfigError};
use crate::controllers::ControllerConfig;
use crate::eval::metrics::{compute_metrics, markdown_table, MetricsSummary, SessionRecord, TurnRecord};
use crate::eval::reference::{ReferenceError, ReferenceSession};
use crate::eval::session::judge_session;
use crate::eval::turn::evaluate_turn;
use crate::pdl::{Diagnostic, Workflow};
use crate::runtime::agent::{Agent, AgentKind};
use crate::runtime::backend::LlmBackend;
use crate::runtime::labeler::Labeler;
use crate::runtime::registry::ToolRegistry;
use crate::sim::oow::OowSpec;
use crate::sim::profile::UserProfile;
use crate::sim::session::{run_session, SimConfig};
use crate::sim::user::UserSimulator;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_MD_FILE: &str = "report.md";
pub const WORKFLOW_FILE: &str = "workflow.pdl";
pub const PROFILE_FILE: &str = "profile.json";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const EVENTS_DIR: &str = "events";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("workflow has errors")]
    Workflow(Vec<Diagnostic>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// A named backend spec, instantiated fresh for each session.
#[derive(Debug, Clone)]
pub struct NamedBackend {
    pub name: String,
    pub spec: BackendSpec,
}

impl NamedBackend {
    pub fn new(name: impl Into<String>, spec: BackendSpec) -> Self {
        Self { name: name.into(), spec }
    }

    pub fn instantiate(&self) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        self.spec.instantiate(&self.name)
    }

    pub fn identity(&self) -> String {
        self.spec.identity(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session_id: String,
    pub transcript: String,
    pub events: String,
    pub end_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub workflow: WorkflowRef,
    pub agent: String,
    pub agent_backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_backend: Option<String>,
    pub controllers: ControllerConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oow: Option<OowSpec>,
    #[serde(default)]
    pub sessions: Vec<SessionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    /// Writes the manifest; refuses to replace an existing one.
    pub fn write_new(&self, dir: &Path) -> Result<(), RunError> {
        use std::io::Write as _;
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        f.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))?;
        f.write_all(b"\n").map_err(|e| io_err(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(MANIFEST_FILE);
        serde_json::from_str(&read(&path)?).map_err(|e| io_err(&path, e))
    }
}

/// Persisted report: the summary plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub agent: String,
    pub backend: String,
    /// `turn` or `session`.
    pub level: String,
    pub summary: MetricsSummary,
}

impl ReportFile {
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let json = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        write(&dir.join(REPORT_FILE), json)?;
        write(&dir.join(REPORT_MD_FILE), self.markdown())
    }

    pub fn markdown(&self) -> String {
        markdown_table(&[(self.row_label(), self.summary.clone())])
    }

    pub fn row_label(&self) -> String {
        format!("{} ({})", self.agent, self.level)
    }
}

pub fn load_workflow(path: &Path) -> Result<(String, Arc<Workflow>), RunError> {
    let source = read(path)?;
    let wf = Workflow::load(&source).map_err(RunError::Workflow)?;
    Ok((source, Arc::new(wf)))
}

/// Everything needed to build an agent; backends are instantiated per
/// session so scripted ones restart for each.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub kind: AgentKind,
    pub workflow: Arc<Workflow>,
    pub backend: NamedBackend,
    pub registry: Arc<ToolRegistry>,
    pub controllers: ControllerConfig,
    pub labeler: Labeler,
    pub current_time: Option<String>,
}

impl AgentSetup {
    pub fn build(&self) -> Result<Agent, ConfigError> {
        let mut agent = Agent::new(
            self.kind,
            self.workflow.clone(),
            self.backend.instantiate()?,
            self.registry.clone(),
        )
        .with_controllers(self.controllers.clone())
        .with_labeler(self.labeler.clone());
        if let Some(t) = &self.current_time {
            agent = agent.with_current_time(t.clone());
        }
        Ok(agent)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub workflow_path: PathBuf,
    pub workflow_source: String,
    pub agent: AgentSetup,
    pub user_backend: NamedBackend,
    pub profile: UserProfile,
    pub session_judge: Option<NamedBackend>,
    pub sim: SimConfig,
    pub sessions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: Option<ReportFile>,
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}

/// Simulates `sessions` conversations into `out`, judging them when a
/// session judge is configured.
pub fn simulate_run(setup: &SimulationSetup, out: &Path) -> Result<RunOutcome, RunError> {
    if out.join(MANIFEST_FILE).exists() {
        return Err(RunError::Invalid(format!(
            "{} already holds a run; choose a new output directory",
            out.display()
        )));
    }
    let started_at = now();
    write(&out.join(WORKFLOW_FILE), &setup.workflow_source)?;
    write(
        &out.join(PROFILE_FILE),
        serde_json::to_string_pretty(&setup.profile).expect("profile serializes") + "\n",
    )?;
    let doc = &setup.agent.workflow.doc;
    let mut entries = Vec::new();
    let mut records: Vec<SessionRecord> = Vec::new();
    for i in 0..setup.sessions {
        let agent = setup.agent.build()?;
        let user = UserSimulator::new(setup.user_backend.instantiate()?, setup.profile.clone(), doc.desc.clone());
        let s = run_session(&agent, &user, &setup.sim, setup.seed, i);
        tracing::info!(session = %s.session_id, reason = %s.end_reason, events = s.events.len(), "session finished");
        let transcript = format!("{TRANSCRIPTS_DIR}/{}.jsonl", s.session_id);
        let events = format!("{EVENTS_DIR}/{}.jsonl", s.session_id);
        write(&out.join(&transcript), s.transcript.to_jsonl())?;
        write(&out.join(&events), s.events_jsonl())?;
        if let Some(j) = &setup.session_judge {
            let judge = j.instantiate()?;
            records.push(judge_session(doc, &s.session_id, &s.actions(), &setup.profile, judge.as_ref()));
        }
        entries.push(SessionEntry {
            session_id: s.session_id,
            transcript,
            events,
            end_reason: s.end_reason,
        });
    }
    let report = match &setup.session_judge {
        Some(_) => {
            write(&out.join("sessions.jsonl"), jsonl(&records))?;
            let r = ReportFile {
                agent: setup.agent.kind.to_string(),
                backend: setup.agent.backend.identity(),
                level: "session".into(),
                summary: compute_metrics(&[], &records),
            };
            r.write(out)?;
            Some(r)
        }
        None => None,
    };
    let manifest = RunManifest {
        run_id: run_id(&setup.workflow_source, setup.seed),
        command: "simulate".into(),
        workflow: WorkflowRef {
            path: setup.workflow_path.display().to_string(),
            sha256: sha256_hex(setup.workflow_source.as_bytes()),
        },
        agent: setup.agent.kind.to_string(),
        agent_backend: setup.agent.backend.identity(),
        user_backend: Some(setup.user_backend.identity()),
        judge_backend: setup.session_judge.as_ref().map(NamedBackend::identity),
        controllers: setup.agent.controllers.clone(),
        seed: setup.seed,
        oow: setup.sim.oow.clone(),
        sessions: entries,
        report: report.as_ref().map(|_| REPORT_FILE.to_string()),
        started_at,
        finished_at: now(),
    };
    manifest.write_new(out)?;
    Ok(RunOutcome { manifest, report })
}

fn run_id(source: &str, seed: u64) -> String {
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    format!("{stamp}-{}-s{seed}", &sha256_hex(source.as_bytes())[..8])
}

/// Transcript files of a run directory (or a bare directory of `.jsonl`
/// files), sorted by name.
pub fn transcript_files(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let sub = dir.join(TRANSCRIPTS_DIR);
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| io_err(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Session-level evaluation of every transcript in `dir`.
pub fn evaluate_sessions(
    workflow: &Workflow,
    dir: &Path,
    profile: &UserProfile,
    judge: &dyn LlmBackend,
) -> Result<Vec<SessionRecord>, RunError> {
    let mut out = Vec::new();
    for f in transcript_files(dir)? {
        let t = ReferenceSession::load(&f)?;
        out.push(judge_session(&workflow.doc, &stem(&f), &t.to_actions(), profile, judge));
    }
    Ok(out)
}

/// Turn-level evaluation of one reference file or every reference file in
/// a directory.
pub fn evaluate_references(
    agent: &AgentSetup,
    reference: &Path,
    judge: &dyn LlmBackend,
) -> Result<Vec<TurnRecord>, RunError> {
    let files = if reference.is_dir() {
        transcript_files(reference)?
    } else {
        vec![reference.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let r = ReferenceSession::load(&f)?;
        if r.bot_turn_indices().is_empty() {
            return Err(RunError::Invalid(format!("{}: reference has no BOT turns", f.display())));
        }
        let a = agent.build()?;
        out.extend(evaluate_turn(&a, &r, &stem(&f), judge));
    }
    Ok(out)
}

/// Every `report.json` under `dir` (depth ≤ 2), sorted by path.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, ReportFile)>, RunError> {
    let mut paths = Vec::new();
    let direct = dir.join(REPORT_FILE);
    if direct.is_file() {
        paths.push(direct);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path().join(REPORT_FILE);
        if p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let r = serde_json::from_str(&read(&p)?).map_err(|e| io_err(&p, e))?;
            Ok((p, r))
        })
        .collect()
}

/// Comparison table with one row per report, labeled by its directory.
pub fn combined_table(dir: &Path, reports: &[(PathBuf, ReportFile)]) -> String {
    let rows: Vec<(String, MetricsSummary)> = reports
        .iter()
        .map(|(p, r)| {
            let run = p
                .parent()
                .and_then(|d| d.strip_prefix(dir).ok())
                .map(|d| d.display().to_string())
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| ".".into());
            (format!("{} [{run}]", r.row_label()), r.summary.clone())
        })
        .collect();
    markdown_table(&rows)
}

pub fn write_turn_records(dir: &Path, records: &[TurnRecord]) -> Result<(), RunError> {
    write(&dir.join("turns.jsonl"), jsonl(records))
}

pub fn write_session_records(dir: &Path, records: &[SessionRecord]) -> Result<(), RunError> {
    write(&dir.join("sessions.jsonl"), jsonl(records))
}
