//! Shared helpers for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use pdl_agent::controllers::ControllerConfig;
use pdl_agent::eval::metrics::TurnKind;
use pdl_agent::eval::{SessionRecord, SlotItem, TurnRecord};
use pdl_agent::pdl::Workflow;
use pdl_agent::runtime::action::{Action, OowAnnotation};
use pdl_agent::runtime::agent::{Agent, AgentKind};
use pdl_agent::runtime::backend::{BackendError, FnBackend, LlmBackend, ScriptedBackend};
use pdl_agent::runtime::prompt::FEEDBACK_PREFIX;
use pdl_agent::runtime::registry::ToolRegistry;
use pdl_agent::sim::{run_session, SimConfig, SimulatedSession, UserProfile, UserSimulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn workflow(name: &str) -> Arc<Workflow> {
    Arc::new(Workflow::load(&fixture_text(name)).unwrap())
}

// ---------------------------------------------------------------------------
// Generated workflows

/// A DAG of API nodes `a0..an` (preconditions point at lower indices) and
/// one `done` answer node gated on `done_pre`.
#[derive(Debug, Clone)]
pub struct DagSpec {
    pub apis: Vec<Vec<usize>>,
    pub done_pre: Vec<usize>,
}

pub fn api_name(i: usize) -> String {
    format!("a{i}")
}

fn name_list(idx: &[usize]) -> String {
    idx.iter().map(|&i| api_name(i)).collect::<Vec<_>>().join(", ")
}

impl DagSpec {
    pub fn random(rng: &mut ChaCha8Rng, max_nodes: usize) -> Self {
        let n = rng.random_range(1..max_nodes);
        let apis = (0..n)
            .map(|i| (0..i).filter(|_| rng.random_bool(0.4)).collect())
            .collect();
        let done_pre = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        Self { apis, done_pre }
    }

    pub fn source(&self, title: &str) -> String {
        let mut s = format!("Name: {title}\nDesc: Generated workflow.\n\nAPIs:\n");
        for (i, pre) in self.apis.iter().enumerate() {
            s.push_str(&format!(
                "  - name: {}\n    desc: Step {i}.\n    request: [x{i}]\n    response: [y{i}]\n    precondition: [{}]\n",
                api_name(i),
                name_list(pre)
            ));
        }
        s.push_str(&format!(
            "\nANSWERs:\n  - name: done\n    desc: All steps are finished.\n    precondition: [{}]\n\nProcedure: |\n",
            name_list(&self.done_pre)
        ));
        for i in 0..self.apis.len() {
            s.push_str(&format!("  [y{i}] = API.{}([x{i}])\n", api_name(i)));
        }
        s.push_str("  ANSWER.done()\n");
        s
    }

    pub fn workflow(&self, title: &str) -> Arc<Workflow> {
        let src = self.source(title);
        Arc::new(Workflow::load(&src).unwrap_or_else(|d| panic!("{src}\n{d:?}")))
    }
}

/// Node actions taken while one of the node's preconditions had not yet
/// executed successfully.
pub fn count_violations(workflow: &Workflow, actions: &[Action]) -> usize {
    let mut executed: BTreeSet<String> = BTreeSet::new();
    let mut violations = 0;
    let unmet = |node: &str, executed: &BTreeSet<String>| {
        workflow
            .graph
            .preconditions(node)
            .is_some_and(|pre| pre.iter().any(|p| !executed.contains(p)))
    };
    for a in actions {
        match a {
            Action::ToolCall { name, .. } => {
                if unmet(name, &executed) {
                    violations += 1;
                }
            }
            Action::ToolResult {
                name, success: true, ..
            } => {
                executed.insert(name.clone());
            }
            Action::BotResponse {
                answer_node: Some(n),
                ..
            } => {
                if unmet(n, &executed) {
                    violations += 1;
                }
                executed.insert(n.clone());
            }
            _ => {}
        }
    }
    violations
}

fn call(name: &str, i: usize) -> String {
    format!("Thought: go.\nAction: {name}\nAction Input: {{\"x{i}\": \"v\"}}")
}

/// Ignores every hint: random node calls (blocked ones included), unknown
/// tools, premature answers and malformed output.
pub fn adversarial_backend(n_apis: usize, seed: u64) -> Arc<dyn LlmBackend> {
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
    Arc::new(FnBackend::new("adversarial", move |_prompt: &str| {
        let mut rng = rng.lock().unwrap();
        let out = match rng.random_range(0..10) {
            0..=5 => {
                let i = rng.random_range(0..n_apis);
                call(&api_name(i), i)
            }
            6 => call("not_a_node", 0),
            7 => "Response: Everything is finished.\nAnswer: done".to_string(),
            8 => "garbage without any fields".to_string(),
            _ => "Response: Could you tell me more?".to_string(),
        };
        Ok::<_, BackendError>(out)
    }))
}

fn listed(prompt: &str, prefix: &str) -> Option<Vec<String>> {
    prompt.lines().rev().find_map(|l| {
        let rest = l.trim_start().strip_prefix(prefix)?;
        let rest = rest.trim().trim_end_matches('.');
        Some(
            rest.split(", ")
                .filter(|s| !s.is_empty() && *s != "(none)")
                .map(str::to_string)
                .collect(),
        )
    })
}

/// Policy that opens every session by jumping straight to the last API.
/// After that it follows whatever the controllers tell it: rejection
/// feedback first, then the accessible-node list. Without either it keeps
/// jumping ahead and declares the task done once the last API has run.
pub fn shortcut_backend(n_apis: usize) -> Arc<dyn LlmBackend> {
    let jumped = Mutex::new(false);
    Arc::new(FnBackend::new("shortcut", move |prompt: &str| {
        let executed = listed(prompt, "Executed nodes:").unwrap_or_default();
        let done = |i: &usize| executed.contains(&api_name(*i));
        let pending: Vec<usize> = (0..n_apis).filter(|i| !done(i)).collect();
        let finish = "Response: All steps are finished.\nAnswer: done".to_string();
        let mut jumped = jumped.lock().unwrap();
        if !*jumped {
            *jumped = true;
            if let Some(&last) = pending.last() {
                return Ok(call(&api_name(last), last));
            }
        }
        let feedback = prompt
            .lines()
            .rev()
            .find(|l| l.starts_with(FEEDBACK_PREFIX) && l.contains("Unmet preconditions:"));
        if let Some(line) = feedback {
            let unmet = line
                .split_once("Unmet preconditions: ")
                .and_then(|(_, rest)| rest.split_once(". "))
                .map(|(list, _)| list.split(", ").map(str::to_string).collect::<Vec<_>>());
            if let Some(unmet) = unmet {
                if let Some(n) = unmet.iter().find(|n| !executed.contains(n)) {
                    let i: usize = n[1..].parse().unwrap();
                    return Ok(call(n, i));
                }
            }
        }
        if let Some(accessible) = listed(prompt, "- Accessible nodes:") {
            return Ok(match pending.iter().find(|i| accessible.contains(&api_name(**i))) {
                Some(&i) => call(&api_name(i), i),
                None => finish,
            });
        }
        if done(&(n_apis - 1)) {
            return Ok(finish);
        }
        let last = *pending.last().unwrap();
        Ok(call(&api_name(last), last))
    }))
}

pub fn repeating_user(utterance: &str) -> UserSimulator {
    let backend = ScriptedBackend::new(vec![format!("Response: {utterance}")]).repeat_last(true);
    let profile = UserProfile {
        persona: "A user who wants every step done.".into(),
        ..UserProfile::default()
    };
    UserSimulator::new(Arc::new(backend), profile, "a generated workflow")
}

pub fn dag_agent(wf: Arc<Workflow>, backend: Arc<dyn LlmBackend>, controllers: ControllerConfig) -> Agent {
    let registry = ToolRegistry::stub_for(&wf.doc);
    Agent::new(AgentKind::Flowagent, wf, backend, Arc::new(registry)).with_controllers(controllers)
}

pub fn simulate(agent: &Agent, user: &UserSimulator, max_user_turns: usize, seed: u64) -> SimulatedSession {
    let cfg = SimConfig {
        max_user_turns,
        ..SimConfig::default()
    };
    run_session(agent, user, &cfg, seed, 0)
}

/// The fixed workflows used for the ablation comparison.
pub fn ablation_suite() -> Vec<DagSpec> {
    vec![
        DagSpec {
            apis: vec![vec![], vec![0], vec![1]],
            done_pre: vec![2],
        },
        DagSpec {
            apis: vec![vec![], vec![0], vec![1], vec![2]],
            done_pre: vec![0, 1, 2, 3],
        },
        DagSpec {
            apis: vec![vec![], vec![0], vec![0], vec![1, 2]],
            done_pre: vec![3],
        },
        DagSpec {
            apis: vec![vec![], vec![], vec![0, 1]],
            done_pre: vec![0, 1, 2],
        },
    ]
}

// ---------------------------------------------------------------------------
// Metric records and an independent recount

pub fn random_item(rng: &mut ChaCha8Rng) -> SlotItem {
    let tools = ["t0", "t1"];
    let slots = ["", "a", "b", "c"];
    let values = ["", "1", "x", "y"];
    SlotItem {
        tool: tools[rng.random_range(0..tools.len())].into(),
        slot: slots[rng.random_range(0..slots.len())].into(),
        value: values[rng.random_range(0..values.len())].into(),
    }
}

fn random_items(rng: &mut ChaCha8Rng) -> Vec<SlotItem> {
    let n = rng.random_range(0..5);
    (0..n).map(|_| random_item(rng)).collect()
}

pub fn random_records(rng: &mut ChaCha8Rng) -> (Vec<TurnRecord>, Vec<SessionRecord>) {
    let turns = (0..rng.random_range(0..12))
        .map(|i| TurnRecord {
            session_id: "s".into(),
            turn_index: i,
            kind: if rng.random_bool(0.5) {
                TurnKind::ToolCall
            } else {
                TurnKind::Response
            },
            oow: rng.random_bool(0.3),
            consistent: rng.random_bool(0.6),
            scores: None,
            reference_items: random_items(rng),
            predicted_items: random_items(rng),
            predicted: Action::bot("x"),
            error: None,
        })
        .collect();
    let sessions = (0..rng.random_range(0..6))
        .map(|i| {
            let required = rng.random_range(0..5);
            let completed = rng.random_range(0..=required);
            SessionRecord {
                session_id: format!("s{i}"),
                oow: rng.random_bool(0.4),
                success: rng.random_bool(0.5),
                task_progress: if required == 0 {
                    1.0
                } else {
                    completed as f64 / required as f64
                },
                required_nodes: Vec::new(),
                completed_nodes: Vec::new(),
                reference_items: random_items(rng),
                predicted_items: random_items(rng),
                user_turns: 1,
                oow_turns: 0,
                warnings: Vec::new(),
            }
        })
        .collect();
    (turns, sessions)
}

/// pass, success, progress, precision, recall, f1 for one split, counted
/// with plain loops.
pub fn recount(turns: &[TurnRecord], sessions: &[SessionRecord], keep: impl Fn(bool) -> bool) -> [f64; 6] {
    fn distinct(items: &[SlotItem]) -> Vec<&SlotItem> {
        let mut out: Vec<&SlotItem> = Vec::new();
        for it in items {
            if !out.contains(&it) {
                out.push(it);
            }
        }
        out
    }
    fn frac(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }
    let (mut n_turns, mut passed) = (0u64, 0u64);
    let (mut n_sessions, mut succeeded, mut progress) = (0u64, 0u64, 0.0f64);
    let (mut tp, mut n_pred, mut n_ref) = (0u64, 0u64, 0u64);
    let mut tally = |r: &[SlotItem], p: &[SlotItem]| {
        let (r, p) = (distinct(r), distinct(p));
        n_ref += r.len() as u64;
        n_pred += p.len() as u64;
        tp += p.iter().filter(|x| r.contains(x)).count() as u64;
    };
    for t in turns.iter().filter(|t| keep(t.oow)) {
        n_turns += 1;
        passed += t.consistent as u64;
        tally(&t.reference_items, &t.predicted_items);
    }
    for s in sessions.iter().filter(|s| keep(s.oow)) {
        n_sessions += 1;
        succeeded += s.success as u64;
        progress += s.task_progress;
        tally(&s.reference_items, &s.predicted_items);
    }
    let precision = frac(tp, n_pred);
    let recall = frac(tp, n_ref);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let mean_progress = if n_sessions == 0 {
        0.0
    } else {
        progress / n_sessions as f64
    };
    [
        frac(passed, n_turns),
        frac(succeeded, n_sessions),
        mean_progress,
        precision,
        recall,
        f1,
    ]
}

pub fn report_values(r: &pdl_agent::eval::MetricsReport) -> [f64; 6] {
    [
        r.pass_rate,
        r.success_rate,
        r.task_progress,
        r.tool_precision,
        r.tool_recall,
        r.tool_f1,
    ]
}

pub fn oow(kind: &str) -> OowAnnotation {
    OowAnnotation::parse(kind).unwrap()
}

// ---------------------------------------------------------------------------
// Prompts

pub const PROMPT_HEADERS: [(&str, &[&str]); 5] = [
    (
        "flowagent",
        &[
            "### Constraints",
            "### PDL",
            "### Available APIs",
            "### History Conversation",
            "### Current state",
            "### Output Format",
        ],
    ),
    (
        "react",
        &[
            "### Specific requirements",
            "### Workflow information",
            "### Tool information",
            "### Current time",
            "### History conversation",
            "### Output format",
        ],
    ),
    (
        "user_simulation",
        &["## User Profile", "## History conversation", "## Specific requirements"],
    ),
    (
        "turn_judge",
        &[
            "Here is the knowledge related to the workflow: ",
            "Here is the previous conversation:",
            "Here is the true value response from the reference: ",
            "Here is the generated response from the assistant: ",
            "Please reply with the scores and consistency judgment in the following format:",
        ],
    ),
    (
        "session_judge",
        &[
            "Here is the knowledge related to the workflow: ",
            "Here is the user profile, including the user's needs:",
            "Here is the conversation:",
            "Please reply in the following format:",
        ],
    ),
];

/// Every prompt kind rendered against the hospital workflow after one
/// successful `check_hospital` call.
pub fn sample_prompts() -> Vec<(&'static str, String)> {
    use pdl_agent::pdl::render_for_prompt;
    use pdl_agent::runtime::action::render_transcript;
    use pdl_agent::runtime::prompt::{session_judge_prompt, turn_judge_prompt};
    use pdl_agent::runtime::state::SessionState;
    use serde_json::json;

    let wf = workflow("hospital.pdl");
    let registry = Arc::new(ToolRegistry::from_file(&fixture("hospital_tools.json")).unwrap());
    let mut args = serde_json::Map::new();
    args.insert("hospital_name".into(), json!("Peking University Third Hospital"));
    let history = vec![
        Action::user("I want a dermatology appointment at Peking University Third Hospital."),
        Action::tool_call("check_hospital", args),
        Action::ToolResult {
            name: "check_hospital".into(),
            payload: json!({"hospital_exists": true}),
            success: true,
        },
    ];
    let state = SessionState::replay("golden", wf.clone(), &history);
    let backend: Arc<dyn LlmBackend> = Arc::new(ScriptedBackend::new(vec![]));
    let agent = |kind| Agent::new(kind, wf.clone(), backend.clone(), registry.clone());
    let profile = UserProfile::load(&fixture("hospital_profile.json")).unwrap();
    let user = UserSimulator::new(backend.clone(), profile.clone(), wf.doc.desc.clone());
    let info = render_for_prompt(&wf.doc);
    let transcript = render_transcript(&history, false);
    vec![
        ("flowagent", agent(AgentKind::Flowagent).prompt(&state, &[])),
        ("react", agent(AgentKind::ReactNl).prompt(&state, &[])),
        ("user_simulation", user.prompt(&history, None)),
        (
            "turn_judge",
            turn_judge_prompt(&info, &transcript, "Which department?", "Which department do you need?"),
        ),
        (
            "session_judge",
            session_judge_prompt(&info, &profile.render_for_prompt(), &transcript),
        ),
    ]
}

pub fn golden_path(kind: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{kind}.txt"))
}

/// Compares every sample prompt with its golden file and checks the
/// section headers. `PDL_AGENT_BLESS=1` rewrites the golden files.
pub fn check_prompts() -> Result<(), String> {
    let bless = std::env::var_os("PDL_AGENT_BLESS").is_some();
    for (kind, text) in sample_prompts() {
        let path = golden_path(kind);
        if bless {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if golden != text {
            return Err(format!("{kind} prompt differs from {}", path.display()));
        }
        let headers = PROMPT_HEADERS.iter().find(|(k, _)| *k == kind).unwrap().1;
        for h in headers {
            if !text.lines().any(|l| l == *h) {
                return Err(format!("{kind} prompt lacks the line {h:?}"));
            }
        }
    }
    Ok(())
}
