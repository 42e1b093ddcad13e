use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use pdl_agent::config::Config;
use pdl_agent::controllers::ControllerConfig;
use pdl_agent::eval::metrics::compute_metrics;
use pdl_agent::pdl::{check, has_errors, Workflow};
use pdl_agent::run::{
    collect_reports, combined_table, evaluate_references, evaluate_sessions, load_workflow, read, simulate_run,
    write, write_session_records, write_turn_records, AgentSetup, NamedBackend, ReportFile, RunError, RunManifest,
    SimulationSetup, MANIFEST_FILE, PROFILE_FILE, WORKFLOW_FILE,
};
use pdl_agent::runtime::action::OowKind;
use pdl_agent::runtime::agent::AgentKind;
use pdl_agent::runtime::registry::ToolRegistry;
use pdl_agent::runtime::state::{ClockMode, Session};
use pdl_agent::service::{self, AppState, ServiceConfig};
use pdl_agent::sim::oow::{OowSchedule, OowSpec};
use pdl_agent::sim::profile::UserProfile;
use pdl_agent::sim::session::SimConfig;

#[derive(Parser)]
#[command(name = "pdl-agent", version, about = "Workflow agent engine: validate, chat, simulate, evaluate, serve")]
struct Cli {
    /// Run configuration (TOML). Also read from PDL_AGENT_CONFIG.
    #[arg(long, global = true, env = "PDL_AGENT_CONFIG")]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `pdl_agent=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a PDL file.
    Validate {
        file: PathBuf,
        /// Print diagnostics as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Interactive terminal chat with an agent.
    Chat {
        file: PathBuf,
        #[command(flatten)]
        agent: AgentArgs,
    },
    /// Simulate conversations with an LLM user into a run directory.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-turn probability of an out-of-workflow instruction.
        #[arg(long)]
        oow_prob: Option<f64>,
        /// Comma-separated 1-based user turns that receive an instruction.
        #[arg(long, value_delimiter = ',')]
        oow_turns: Vec<usize>,
        /// Fix the OOW kind instead of drawing one per firing.
        #[arg(long)]
        oow_kind: Option<String>,
        /// User profile (.json or markdown).
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        user_backend: Option<String>,
        /// Session judge; the run is judged and reported when set.
        #[arg(long)]
        judge: Option<String>,
        #[arg(long)]
        max_user_turns: Option<usize>,
        /// Output directory (default: runs/<timestamp>-seed<S>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        agent: AgentArgs,
    },
    /// Turn- or session-level evaluation.
    Evaluate {
        #[command(subcommand)]
        level: EvaluateLevel,
    },
    /// Combine the reports found under a directory into one table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Workflows to register at start-up.
        #[arg(long = "workflow")]
        workflows: Vec<PathBuf>,
        /// Tool registry for the registered workflows.
        #[arg(long)]
        tools: Option<PathBuf>,
        /// Default policy backend.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Append each session's events to <dir>/<session>.jsonl.
        #[arg(long)]
        events_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvaluateLevel {
    /// Replay reference prefixes and score each predicted BOT turn.
    Turn {
        /// Reference JSONL file, or a directory of them.
        #[arg(long)]
        reference: PathBuf,
        /// Workflow file; defaults to the run directory's copy.
        #[arg(long)]
        workflow: Option<PathBuf>,
        /// Turn judge (default: config `judge.turn`, else exact-match).
        #[arg(long)]
        judge: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 1 when the overall pass rate is below this.
        #[arg(long)]
        fail_under: Option<f64>,
        #[command(flatten)]
        agent: AgentArgs,
    },
    /// Judge persisted transcripts.
    Session {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        workflow: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        judge: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 1 when the overall success rate is below this.
        #[arg(long)]
        fail_under: Option<f64>,
    },
}

#[derive(Args, Clone)]
struct AgentArgs {
    /// flowagent, react-nl, react-code or react-fc.
    #[arg(long)]
    agent: Option<String>,
    /// Policy backend name from the config.
    #[arg(long)]
    backend: Option<String>,
    /// Tool registry JSON; stub tools are used when absent.
    #[arg(long)]
    tools: Option<PathBuf>,
    #[arg(long)]
    without_pre: bool,
    #[arg(long)]
    without_post: bool,
    /// Turn on all controllers for a ReAct agent.
    #[arg(long)]
    with_controllers: bool,
}

/// Exit status plus message.
enum Failure {
    /// Diagnostics or threshold failure.
    Check(String),
    /// Bad invocation, missing files, bad config.
    Usage(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Workflow(diags) => {
                Failure::Check(diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<pdl_agent::config::ConfigError> for Failure {
    fn from(e: pdl_agent::config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    let config = match &cli.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => Config::default(),
    };
    let result = match cli.command {
        Command::Validate { file, json } => cmd_validate(&file, json),
        Command::Chat { file, agent } => cmd_chat(&config, &file, &agent),
        Command::Simulate {
            file,
            sessions,
            seed,
            oow_prob,
            oow_turns,
            oow_kind,
            profile,
            user_backend,
            judge,
            max_user_turns,
            out,
            agent,
        } => oow_spec(oow_prob, oow_turns, oow_kind).and_then(|oow| {
            cmd_simulate(
                &config,
                &file,
                SimulateArgs {
                    sessions,
                    seed,
                    oow,
                    profile,
                    user_backend,
                    judge,
                    max_user_turns,
                    out,
                },
                &agent,
            )
        }),
        Command::Evaluate {
            level:
                EvaluateLevel::Turn {
                    reference,
                    workflow,
                    judge,
                    out,
                    fail_under,
                    agent,
                },
        } => cmd_evaluate_turn(&config, &reference, workflow, judge, out, fail_under, &agent),
        Command::Evaluate {
            level:
                EvaluateLevel::Session {
                    transcripts,
                    workflow,
                    profile,
                    judge,
                    out,
                    fail_under,
                },
        } => cmd_evaluate_session(&config, &transcripts, workflow, profile, judge, out, fail_under),
        Command::Report { runs, out } => cmd_report(&runs, out),
        Command::Serve {
            addr,
            workflows,
            tools,
            backend,
            profile,
            events_dir,
        } => cmd_serve(&config, addr, &workflows, tools, backend, profile, events_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            if !m.is_empty() {
                eprintln!("{m}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn cmd_validate(file: &Path, json: bool) -> CmdResult {
    let source = read(file)?;
    let diags = check(&source);
    if json {
        println!("{}", serde_json::to_string_pretty(&diags).expect("diagnostics serialize"));
    } else {
        for d in &diags {
            println!("{}:{d}", file.display());
        }
        let errors = diags.iter().filter(|d| d.is_error()).count();
        println!("{} error(s), {} warning(s)", errors, diags.len() - errors);
    }
    if has_errors(&diags) {
        Err(Failure::Check(String::new()))
    } else {
        Ok(())
    }
}

fn agent_setup(config: &Config, workflow: Arc<Workflow>, args: &AgentArgs) -> Result<AgentSetup, Failure> {
    let kind_name = args
        .agent
        .clone()
        .or_else(|| config.agent.kind.clone())
        .unwrap_or_else(|| "flowagent".into());
    let kind: AgentKind = kind_name.parse().map_err(Failure::Usage)?;
    let backend_name = args
        .backend
        .clone()
        .or_else(|| config.agent.backend.clone())
        .ok_or_else(|| Failure::Usage("no policy backend: pass --backend or set agent.backend".into()))?;
    let backend = NamedBackend::new(backend_name.clone(), config.backend_spec(&backend_name)?);
    let tools = args.tools.clone().or_else(|| config.agent.tools.clone());
    let registry = match tools {
        Some(p) => ToolRegistry::from_file(&p)
            .map_err(Failure::Usage)?
            .with_schemas_from(&workflow.doc),
        None => ToolRegistry::stub_for(&workflow.doc),
    };
    let missing = registry.missing_tools(&workflow.doc);
    if !missing.is_empty() {
        tracing::warn!(?missing, "tools without a registry entry");
    }
    let mut controllers = if args.with_controllers {
        ControllerConfig::default()
    } else {
        config.controllers.clone().unwrap_or_else(|| kind.default_controllers())
    };
    if args.without_pre {
        controllers = controllers.without_pre();
    }
    if args.without_post {
        controllers = controllers.without_post();
    }
    Ok(AgentSetup {
        kind,
        workflow,
        backend,
        registry: Arc::new(registry),
        controllers,
        labeler: config.agent.labeler.build(),
        current_time: config.agent.current_time.clone(),
    })
}

fn cmd_chat(config: &Config, file: &Path, args: &AgentArgs) -> CmdResult {
    let (_, workflow) = load_workflow(file)?;
    let setup = agent_setup(config, workflow.clone(), args)?;
    let agent = setup.build()?;
    let mut session = Session::new("chat", workflow.clone(), ClockMode::Wall);
    println!(
        "{} ({}) with {}. Empty line or Ctrl-D to quit.",
        workflow.doc.name,
        agent.kind,
        setup.backend.identity()
    );
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    loop {
        print!("USER: ");
        let _ = out.flush();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| Failure::Usage(e.to_string()))? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            break;
        }
        let outcome = match agent.chat_turn(&mut session, text) {
            Ok(o) => o,
            Err(e) => {
                println!("[session] {e}");
                break;
            }
        };
        for a in &outcome.emitted {
            match a {
                pdl_agent::runtime::Action::ToolCall { .. } | pdl_agent::runtime::Action::ToolResult { .. } => {
                    if let Some(l) = pdl_agent::runtime::action::transcript_line(a, false) {
                        println!("  {l}");
                    }
                }
                pdl_agent::runtime::Action::ControllerFeedback { controller_id, text } => {
                    println!("  [{controller_id}] {text}");
                }
                _ => {}
            }
        }
        println!("BOT: {}", outcome.response);
        println!("{}", state_summary(&session));
        if session.state.ended {
            break;
        }
    }
    Ok(())
}

fn state_summary(session: &Session) -> String {
    let s = &session.state;
    let graph = &s.workflow.graph;
    let executed: Vec<&str> = s.executed_names().into_iter().filter(|n| graph.nodes.contains(*n)).collect();
    let (accessible, blocked) = match graph.accessible_nodes(&executed) {
        Ok(a) => (
            a.accessible.into_iter().collect::<Vec<_>>().join(", "),
            a.blocked.keys().cloned().collect::<Vec<_>>().join(", "),
        ),
        Err(e) => (e.to_string(), String::new()),
    };
    format!(
        "  [state] turn {} | executed: {} | accessible: {} | blocked: {}",
        s.user_turns,
        s.executed_in_order().join(", "),
        accessible,
        blocked
    )
}

fn oow_spec(prob: Option<f64>, turns: Vec<usize>, kind: Option<String>) -> Result<Option<OowSpec>, Failure> {
    let kind = match kind {
        Some(k) => Some(OowKind::parse(&k).ok_or_else(|| Failure::Usage(format!("unknown OOW kind '{k}'")))?),
        None => None,
    };
    let schedule = match (prob, turns.is_empty()) {
        (Some(_), false) => return Err(Failure::Usage("--oow-prob and --oow-turns are exclusive".into())),
        (Some(p), true) if !(0.0..=1.0).contains(&p) => {
            return Err(Failure::Usage(format!("--oow-prob must lie in [0, 1], got {p}")))
        }
        (Some(p), true) => OowSchedule::Probability(p),
        (None, false) => OowSchedule::Turns(turns),
        (None, true) => return Ok(None),
    };
    Ok(Some(OowSpec {
        kind,
        schedule,
        instruction_text: None,
        subtype: None,
    }))
}

struct SimulateArgs {
    sessions: usize,
    seed: u64,
    oow: Option<OowSpec>,
    profile: Option<PathBuf>,
    user_backend: Option<String>,
    judge: Option<String>,
    max_user_turns: Option<usize>,
    out: Option<PathBuf>,
}

fn load_profile(path: Option<PathBuf>) -> Result<UserProfile, Failure> {
    match path {
        Some(p) => UserProfile::load(&p).map_err(Failure::Usage),
        None => {
            tracing::warn!("no user profile given; using an empty profile");
            Ok(UserProfile::default())
        }
    }
}

fn cmd_simulate(config: &Config, file: &Path, a: SimulateArgs, agent: &AgentArgs) -> CmdResult {
    let (source, workflow) = load_workflow(file)?;
    let setup = agent_setup(config, workflow, agent)?;
    let user_name = a
        .user_backend
        .or_else(|| config.user.backend.clone())
        .ok_or_else(|| Failure::Usage("no user backend: pass --user-backend or set user.backend".into()))?;
    let profile = load_profile(a.profile.or_else(|| config.user.profile.clone()))?;
    let judge = match a.judge.or_else(|| config.judge.session.clone()) {
        Some(j) => Some(NamedBackend::new(j.clone(), config.backend_spec(&j)?)),
        None => None,
    };
    let sim = SimConfig {
        max_user_turns: a
            .max_user_turns
            .or(config.simulation.max_user_turns)
            .unwrap_or(SimConfig::default().max_user_turns),
        oow: a.oow,
        clock: ClockMode::Logical,
    };
    let out = a.out.unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-seed{}", chrono::Utc::now().format("%Y%m%dT%H%M%S"), a.seed))
    });
    let setup = SimulationSetup {
        workflow_path: file.to_path_buf(),
        workflow_source: source,
        agent: setup,
        user_backend: NamedBackend::new(user_name.clone(), config.backend_spec(&user_name)?),
        profile,
        session_judge: judge,
        sim,
        sessions: a.sessions,
        seed: a.seed,
    };
    let outcome = simulate_run(&setup, &out)?;
    println!("run directory: {}", out.display());
    for s in &outcome.manifest.sessions {
        println!("{}  {}  ({})", s.session_id, s.transcript, s.end_reason);
    }
    if let Some(r) = outcome.report {
        println!("{}", serde_json::to_string_pretty(&r.summary).expect("summary serializes"));
        print!("{}", r.markdown());
    }
    Ok(())
}

/// The workflow named on the command line, else the copy stored in the
/// run directory that holds `path`.
fn resolve_workflow(explicit: Option<PathBuf>, path: &Path) -> Result<(String, Arc<Workflow>), Failure> {
    if let Some(w) = explicit {
        return Ok(load_workflow(&w)?);
    }
    let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().map(Path::to_path_buf).unwrap_or_default() };
    for candidate in [dir.clone(), dir.parent().map(Path::to_path_buf).unwrap_or_default()] {
        let wf = candidate.join(WORKFLOW_FILE);
        if wf.is_file() {
            let loaded = load_workflow(&wf)?;
            if candidate.join(MANIFEST_FILE).is_file() {
                let m = RunManifest::load(&candidate)?;
                if m.workflow.sha256 != pdl_agent::run::sha256_hex(loaded.0.as_bytes()) {
                    return Err(Failure::Usage(format!("{} does not match its manifest hash", wf.display())));
                }
            }
            return Ok(loaded);
        }
    }
    Err(Failure::Usage("no workflow: pass --workflow".into()))
}

fn emit_report(report: &ReportFile, out: Option<&Path>, fail_under: Option<f64>, headline: f64) -> CmdResult {
    println!("{}", serde_json::to_string_pretty(&report.summary).expect("summary serializes"));
    print!("{}", report.markdown());
    if let Some(dir) = out {
        report.write(dir)?;
    }
    match fail_under {
        Some(t) if headline < t => Err(Failure::Check(format!("metric {headline:.4} is below the threshold {t}"))),
        _ => Ok(()),
    }
}

fn cmd_evaluate_turn(
    config: &Config,
    reference: &Path,
    workflow: Option<PathBuf>,
    judge: Option<String>,
    out: Option<PathBuf>,
    fail_under: Option<f64>,
    agent: &AgentArgs,
) -> CmdResult {
    let (_, wf) = resolve_workflow(workflow, reference)?;
    let setup = agent_setup(config, wf, agent)?;
    let judge_name = judge
        .or_else(|| config.judge.turn.clone())
        .unwrap_or_else(|| "exact-match".into());
    let judge = config.backend(&judge_name)?;
    let records = evaluate_references(&setup, reference, judge.as_ref())?;
    if let Some(dir) = &out {
        write_turn_records(dir, &records)?;
    }
    let report = ReportFile {
        agent: setup.kind.to_string(),
        backend: setup.backend.identity(),
        level: "turn".into(),
        summary: compute_metrics(&records, &[]),
    };
    let pass = report.summary.overall.pass_rate;
    emit_report(&report, out.as_deref(), fail_under, pass)
}

fn cmd_evaluate_session(
    config: &Config,
    transcripts: &Path,
    workflow: Option<PathBuf>,
    profile: Option<PathBuf>,
    judge: Option<String>,
    out: Option<PathBuf>,
    fail_under: Option<f64>,
) -> CmdResult {
    let (_, wf) = resolve_workflow(workflow, transcripts)?;
    let manifest = RunManifest::load(transcripts).ok();
    let stored = transcripts.join(PROFILE_FILE);
    let profile = load_profile(
        profile
            .or_else(|| stored.is_file().then_some(stored))
            .or_else(|| config.user.profile.clone()),
    )?;
    let judge_name = judge
        .or_else(|| config.judge.session.clone())
        .ok_or_else(|| Failure::Usage("no session judge: pass --judge or set judge.session".into()))?;
    let judge = config.backend(&judge_name)?;
    let records = evaluate_sessions(&wf, transcripts, &profile, judge.as_ref())?;
    if let Some(dir) = &out {
        write_session_records(dir, &records)?;
    }
    let report = ReportFile {
        agent: manifest.as_ref().map(|m| m.agent.clone()).unwrap_or_else(|| "unknown".into()),
        backend: manifest.map(|m| m.agent_backend).unwrap_or_else(|| "unknown".into()),
        level: "session".into(),
        summary: compute_metrics(&[], &records),
    };
    let success = report.summary.overall.success_rate;
    emit_report(&report, out.as_deref(), fail_under, success)
}

fn cmd_report(runs: &Path, out: Option<PathBuf>) -> CmdResult {
    let reports = collect_reports(runs)?;
    if reports.is_empty() {
        return Err(Failure::Usage(format!("no report.json under {}", runs.display())));
    }
    let table = combined_table(runs, &reports);
    print!("{table}");
    if let Some(p) = out {
        write(&p, table)?;
    }
    Ok(())
}

fn cmd_serve(
    config: &Config,
    addr: std::net::SocketAddr,
    workflows: &[PathBuf],
    tools: Option<PathBuf>,
    backend: Option<String>,
    profile: Option<PathBuf>,
    events_dir: Option<PathBuf>,
) -> CmdResult {
    let backend = backend
        .or_else(|| config.agent.backend.clone())
        .ok_or_else(|| Failure::Usage("no policy backend: pass --backend or set agent.backend".into()))?;
    config.backend_spec(&backend)?;
    let mut svc = ServiceConfig::from_config(config, &backend);
    svc.events_dir = events_dir;
    if let Some(p) = profile.or_else(|| config.user.profile.clone()) {
        svc.profile = Some(UserProfile::load(&p).map_err(Failure::Usage)?);
    }
    let state = AppState::new(svc);
    let tools = tools.or_else(|| config.agent.tools.clone());
    for w in workflows {
        let source = read(w)?;
        let registry = match &tools {
            Some(t) => Some(ToolRegistry::from_file(t).map_err(Failure::Usage)?),
            None => None,
        };
        let id = state.register_workflow(&source, registry).map_err(|d| {
            Failure::Check(d.iter().map(|x| format!("{}:{x}", w.display())).collect::<Vec<_>>().join("\n"))
        })?;
        println!("registered {} as {id}", w.display());
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Usage(e.to_string()))?;
    println!("listening on http://{addr}");
    rt.block_on(service::serve(state, addr))
        .map_err(|e| Failure::Usage(e.to_string()))
}
