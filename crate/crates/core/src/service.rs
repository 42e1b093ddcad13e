//! HTTP API over live sessions, with a server-sent event stream per
//! session.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/workflows/validate` | diagnostics for `{pdl}` |
//! | GET | `/workflows` | registered workflows with nodes and edges |
//! | POST | `/workflows` | register `{pdl, tools?}` |
//! | GET | `/workflows/{id}` | one workflow |
//! | POST | `/sessions` | `{workflow_id, agent?, backend?, controllers?, simulated_user?}` |
//! | POST | `/sessions/{id}/messages` | `{text}`; runs one turn |
//! | GET | `/sessions/{id}/state` | fold over the event log |
//! | GET | `/sessions/{id}/events` | SSE; `?since=N`, `?format=json` |
//! | POST | `/sessions/{id}/oow` | `{kind, subtype?, instruction?}` arms the next simulated turn |
//! | POST | `/sessions/{id}/advance` | one simulated user turn plus the agent's reply |

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::config::{Config, ConfigError};
use crate::controllers::ControllerConfig;
use crate::pdl::{check, Diagnostic, Workflow};
use crate::run::sha256_hex;
use crate::runtime::action::{Action, OowKind};
use crate::runtime::agent::{Agent, AgentKind};
use crate::runtime::backend::LlmBackend;
use crate::runtime::labeler::Labeler;
use crate::runtime::registry::ToolRegistry;
use crate::runtime::state::{ClockMode, Event, Session, SessionState};
use crate::sim::oow::{firing, OowFiring};
use crate::sim::profile::UserProfile;
use crate::sim::session::advance_turn;
use crate::sim::user::UserSimulator;

pub type BackendFactory = Arc<dyn Fn() -> Result<Arc<dyn LlmBackend>, ConfigError> + Send + Sync>;

/// Backends, defaults and persistence for a service instance.
#[derive(Clone)]
pub struct ServiceConfig {
    pub backends: BTreeMap<String, BackendFactory>,
    pub default_backend: String,
    pub user_backend: Option<String>,
    pub profile: Option<UserProfile>,
    pub labeler: Labeler,
    pub controllers: Option<ControllerConfig>,
    pub max_user_turns: usize,
    pub clock: ClockMode,
    /// When set, each session's events are appended to `<dir>/<id>.jsonl`.
    pub events_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(default_backend: impl Into<String>, factory: BackendFactory) -> Self {
        let name = default_backend.into();
        Self {
            backends: BTreeMap::from([(name.clone(), factory)]),
            default_backend: name,
            user_backend: None,
            profile: None,
            labeler: Labeler::ExplicitOnly,
            controllers: None,
            max_user_turns: 30,
            clock: ClockMode::Wall,
            events_dir: None,
        }
    }

    pub fn with_backend(mut self, name: impl Into<String>, factory: BackendFactory) -> Self {
        self.backends.insert(name.into(), factory);
        self
    }

    /// Every configured backend becomes available by name.
    pub fn from_config(cfg: &Config, default_backend: &str) -> Self {
        let mut out = Self::new(default_backend, factory_for(cfg, default_backend));
        for name in cfg.backends.keys().map(String::as_str).chain(["exact-match"]) {
            out.backends.insert(name.to_string(), factory_for(cfg, name));
        }
        out.user_backend = cfg.user.backend.clone();
        if let Some(u) = &out.user_backend {
            out.backends.insert(u.clone(), factory_for(cfg, u));
        }
        out.labeler = cfg.agent.labeler.build();
        out.controllers = cfg.controllers.clone();
        if let Some(n) = cfg.simulation.max_user_turns {
            out.max_user_turns = n;
        }
        out
    }
}

fn factory_for(cfg: &Config, name: &str) -> BackendFactory {
    let spec = cfg.backend_spec(name);
    let name = name.to_string();
    Arc::new(move || match &spec {
        Ok(s) => s.instantiate(&name),
        Err(_) => Err(ConfigError::UnknownBackend(name.clone())),
    })
}

#[derive(Debug, Clone)]
pub struct RegisteredWorkflow {
    pub id: String,
    pub workflow: Arc<Workflow>,
    pub registry: Arc<ToolRegistry>,
}

struct EventLog {
    events: Vec<Event>,
    tx: broadcast::Sender<Event>,
    file: Option<std::fs::File>,
}

struct SessionCore {
    session: Session,
}

struct SessionHandle {
    id: String,
    workflow_id: String,
    agent: Agent,
    user: Option<UserSimulator>,
    core: Mutex<SessionCore>,
    log: Arc<Mutex<EventLog>>,
    busy: AtomicBool,
    armed: Mutex<Option<OowFiring>>,
    max_user_turns: usize,
}

/// Clears the in-flight flag when a turn finishes or panics.
struct BusyGuard(Arc<SessionHandle>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::SeqCst);
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    workflows: RwLock<BTreeMap<String, RegisteredWorkflow>>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                workflows: RwLock::new(BTreeMap::new()),
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    /// Registers a workflow under a content-derived id. Re-registering
    /// the same text returns the same id.
    pub fn register_workflow(&self, source: &str, registry: Option<ToolRegistry>) -> Result<String, Vec<Diagnostic>> {
        let wf = Workflow::load(source)?;
        let id = sha256_hex(source.as_bytes())[..12].to_string();
        let registry = registry
            .map(|r| r.with_schemas_from(&wf.doc))
            .unwrap_or_else(|| ToolRegistry::stub_for(&wf.doc));
        self.inner
            .workflows
            .write()
            .expect("workflow lock")
            .entry(id.clone())
            .or_insert_with(|| RegisteredWorkflow {
                id: id.clone(),
                workflow: Arc::new(wf),
                registry: Arc::new(registry),
            });
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session '{id}'")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            details: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.message});
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/workflows/validate", post(validate_workflow))
        .route("/workflows", get(list_workflows).post(create_workflow))
        .route("/workflows/{id}", get(get_workflow))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/oow", post(arm_oow))
        .route("/sessions/{id}/advance", post(advance))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct PdlBody {
    pub pdl: String,
    #[serde(default)]
    pub tools: Option<ToolRegistry>,
}

#[derive(Debug, Serialize)]
struct ValidateResponse {
    valid: bool,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
}

async fn validate_workflow(Json(body): Json<PdlBody>) -> Response {
    let (errors, warnings): (Vec<_>, Vec<_>) = check(&body.pdl).into_iter().partition(Diagnostic::is_error);
    let valid = errors.is_empty();
    let status = if valid {
        StatusCode::OK
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    (status, Json(ValidateResponse { valid, errors, warnings })).into_response()
}

fn workflow_summary(w: &RegisteredWorkflow) -> Value {
    let doc = &w.workflow.doc;
    let nodes: Vec<Value> = doc
        .nodes()
        .map(|n| {
            json!({
                "name": n.name,
                "kind": n.kind.as_str(),
                "desc": n.desc,
                "request": n.request_slots,
                "response": n.response_slots,
                "preconditions": n.preconditions,
            })
        })
        .collect();
    let edges: Vec<Value> = w
        .workflow
        .graph
        .edges
        .iter()
        .flat_map(|(n, pres)| pres.iter().map(move |p| json!({"from": p, "to": n})))
        .collect();
    json!({
        "workflow_id": w.id,
        "name": doc.name,
        "desc": doc.desc,
        "nodes": nodes,
        "edges": edges,
    })
}

async fn list_workflows(State(state): State<AppState>) -> Json<Vec<Value>> {
    let wfs = state.inner.workflows.read().expect("workflow lock");
    Json(wfs.values().map(workflow_summary).collect())
}

async fn get_workflow(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let wfs = state.inner.workflows.read().expect("workflow lock");
    wfs.get(&id)
        .map(|w| Json(workflow_summary(w)))
        .ok_or_else(|| ApiError::not_found(format!("unknown workflow '{id}'")))
}

async fn create_workflow(State(state): State<AppState>, Json(body): Json<PdlBody>) -> Result<Response, ApiError> {
    match state.register_workflow(&body.pdl, body.tools) {
        Ok(id) => Ok((StatusCode::CREATED, Json(json!({"workflow_id": id}))).into_response()),
        Err(diags) => Err(ApiError {
            details: Some(serde_json::to_value(diags).expect("diagnostics serialize")),
            ..ApiError::unprocessable("workflow has errors")
        }),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedUserBody {
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub profile: Option<UserProfile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub workflow_id: String,
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub backend: Option<String>,
    /// Partial override merged over the agent kind's defaults.
    #[serde(default)]
    pub controllers: Option<Value>,
    #[serde(default)]
    pub simulated_user: Option<SimulatedUserBody>,
}

fn merge_controllers(base: &ControllerConfig, overrides: &Value) -> Result<ControllerConfig, String> {
    let Value::Object(o) = overrides else {
        return Err("controllers must be an object".into());
    };
    let mut v = serde_json::to_value(base).expect("config serializes");
    for (k, val) in o {
        v[k] = val.clone();
    }
    let cfg: ControllerConfig = serde_json::from_value(v).map_err(|e| e.to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

fn instantiate(config: &ServiceConfig, name: &str) -> Result<Arc<dyn LlmBackend>, ApiError> {
    let f = config
        .backends
        .get(name)
        .ok_or_else(|| ApiError::unprocessable(format!("unknown backend '{name}'")))?;
    f().map_err(|e| ApiError::unprocessable(e.to_string()))
}

async fn create_session(State(state): State<AppState>, Json(body): Json<CreateSession>) -> Result<Response, ApiError> {
    let config = &state.inner.config;
    let wf = state
        .inner
        .workflows
        .read()
        .expect("workflow lock")
        .get(&body.workflow_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown workflow '{}'", body.workflow_id)))?;
    let kind: AgentKind = match &body.agent {
        Some(a) => a.parse().map_err(ApiError::unprocessable)?,
        None => AgentKind::Flowagent,
    };
    let base = match &config.controllers {
        Some(c) => c.clone(),
        None => kind.default_controllers(),
    };
    let controllers = match &body.controllers {
        Some(o) => merge_controllers(&base, o).map_err(ApiError::unprocessable)?,
        None => base,
    };
    let backend = instantiate(config, body.backend.as_deref().unwrap_or(&config.default_backend))?;
    let agent = Agent::new(kind, wf.workflow.clone(), backend, wf.registry.clone())
        .with_controllers(controllers)
        .with_labeler(config.labeler.clone());
    let user = match body.simulated_user {
        Some(u) => {
            let name = u
                .backend
                .or_else(|| config.user_backend.clone())
                .ok_or_else(|| ApiError::unprocessable("no user simulator backend configured"))?;
            let profile = u.profile.or_else(|| config.profile.clone()).unwrap_or_default();
            Some(UserSimulator::new(
                instantiate(config, &name)?,
                profile,
                wf.workflow.doc.desc.clone(),
            ))
        }
        None => None,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let file = match &config.events_dir {
        Some(dir) => {
            let path = dir.join(format!("{id}.jsonl"));
            let open = std::fs::create_dir_all(dir).and_then(|_| {
                std::fs::OpenOptions::new().create(true).append(true).open(&path)
            });
            Some(open.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?)
        }
        None => None,
    };
    let (tx, _) = broadcast::channel(256);
    let log = Arc::new(Mutex::new(EventLog {
        events: Vec::new(),
        tx,
        file,
    }));
    let mut session = Session::new(id.clone(), wf.workflow.clone(), config.clock);
    let sink = log.clone();
    session.set_listener(Box::new(move |e: &Event| {
        let mut log = sink.lock().expect("event log lock");
        if let Some(f) = log.file.as_mut() {
            let line = serde_json::to_string(e).expect("event serializes");
            if let Err(err) = writeln!(f, "{line}") {
                tracing::error!(error = %err, "failed to persist event");
            }
        }
        log.events.push(e.clone());
        let _ = log.tx.send(e.clone());
    }));
    let handle = Arc::new(SessionHandle {
        id: id.clone(),
        workflow_id: wf.id.clone(),
        agent,
        user,
        core: Mutex::new(SessionCore { session }),
        log,
        busy: AtomicBool::new(false),
        armed: Mutex::new(None),
        max_user_turns: config.max_user_turns,
    });
    state
        .inner
        .sessions
        .write()
        .expect("session lock")
        .insert(id.clone(), handle);
    tracing::info!(session = %id, agent = %kind, "session created");
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": id, "workflow_id": wf.id, "agent": kind.as_str()})),
    )
        .into_response())
}

fn claim(handle: &Arc<SessionHandle>) -> Result<BusyGuard, ApiError> {
    handle
        .busy
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .map_err(|_| ApiError::conflict("a turn is already in flight for this session"))?;
    Ok(BusyGuard(handle.clone()))
}

#[derive(Debug, Deserialize)]
pub struct MessageBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnResponse {
    /// The user message that opened the turn (simulated turns only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_text: Option<String>,
    pub response: Option<String>,
    pub answer_node: Option<String>,
    pub ended: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_reason: Option<String>,
    /// Actions emitted during the turn, feedback included.
    pub actions: Vec<Action>,
}

fn turn_response(core: &SessionCore, start: usize) -> TurnResponse {
    let emitted: Vec<Action> = core.session.events[start..].iter().map(|e| e.action.clone()).collect();
    let mut r = TurnResponse {
        user_text: None,
        response: None,
        answer_node: None,
        ended: core.session.state.ended,
        end_reason: None,
        actions: emitted.clone(),
    };
    for a in emitted {
        match a {
            Action::UserMessage { text, .. } => r.user_text = Some(text),
            Action::BotResponse { text, answer_node, .. } => {
                r.response = Some(text);
                r.answer_node = answer_node;
            }
            Action::SessionEnd { reason } => r.end_reason = Some(reason),
            _ => {}
        }
    }
    r
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> Result<Json<TurnResponse>, ApiError> {
    let handle = state.session(&id)?;
    let guard = claim(&handle)?;
    let result = tokio::task::spawn_blocking(move || {
        let h = &guard.0;
        let mut core = h.core.lock().expect("session lock");
        let start = core.session.events.len();
        h.agent
            .chat_turn(&mut core.session, &body.text)
            .map(|_| turn_response(&core, start))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    result.map(Json).map_err(|e| ApiError::conflict(e.to_string()))
}

#[derive(Debug, Deserialize)]
pub struct OowBody {
    pub kind: String,
    #[serde(default)]
    pub subtype: Option<String>,
    #[serde(default)]
    pub instruction: Option<String>,
}

async fn arm_oow(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<OowBody>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.session(&id)?;
    if handle.user.is_none() {
        return Err(ApiError::unprocessable(
            "OOW steering needs a session with a simulated user",
        ));
    }
    let kind = OowKind::parse(&body.kind).ok_or_else(|| {
        ApiError::unprocessable(format!(
            "unknown OOW kind '{}' (expected intent_switching, procedure_jumping or irrelevant_answering)",
            body.kind
        ))
    })?;
    let f = firing(kind, body.subtype, body.instruction.as_deref());
    let armed = json!({"armed": f.annotation.to_string(), "instruction": f.instruction});
    *handle.armed.lock().expect("armed lock") = Some(f);
    Ok(Json(armed))
}

async fn advance(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<TurnResponse>, ApiError> {
    let handle = state.session(&id)?;
    if handle.user.is_none() {
        return Err(ApiError::unprocessable("session has no simulated user"));
    }
    let guard = claim(&handle)?;
    let result = tokio::task::spawn_blocking(move || {
        let h = &guard.0;
        let mut core = h.core.lock().expect("session lock");
        if core.session.state.ended {
            return Err(ApiError::conflict("session has ended"));
        }
        let armed = h.armed.lock().expect("armed lock").take();
        let start = core.session.events.len();
        let user = h.user.as_ref().expect("checked above");
        advance_turn(&h.agent, user, &mut core.session, None, armed, h.max_user_turns);
        Ok(turn_response(&core, start))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    result.map(Json)
}

async fn session_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.session(&id)?;
    let events: Vec<Event> = handle.log.lock().expect("event log lock").events.clone();
    let wf = handle.agent.workflow.clone();
    let s = SessionState::replay(&handle.id, wf.clone(), events.iter().map(|e| &e.action));
    let executed: Vec<&str> = s
        .executed_names()
        .into_iter()
        .filter(|n| wf.graph.nodes.contains(*n))
        .collect();
    let access = wf
        .graph
        .accessible_nodes(&executed)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let feedback = events
        .iter()
        .filter(|e| matches!(e.action, Action::ControllerFeedback { .. }))
        .count();
    let armed = handle
        .armed
        .lock()
        .expect("armed lock")
        .as_ref()
        .map(|f| f.annotation.to_string());
    Ok(Json(json!({
        "session_id": handle.id,
        "workflow_id": handle.workflow_id,
        "agent": handle.agent.kind.as_str(),
        "executed": s.executed,
        "executed_order": s.executed_in_order(),
        "accessible": access.accessible,
        "blocked": access.blocked,
        "user_turns": s.user_turns,
        "events": events.len(),
        "controller_interventions": feedback,
        "ended": s.ended,
        "in_flight": handle.busy.load(Ordering::SeqCst),
        "simulated_user": handle.user.is_some(),
        "armed_oow": armed,
    })))
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub since: Option<u64>,
    #[serde(default)]
    pub format: Option<String>,
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(e.action.type_name())
        .data(serde_json::to_string(e).expect("event serializes"))
}

/// Replays the log from `since`, then follows live events. Ends after a
/// `SessionEnd` event.
fn event_stream(log: Arc<Mutex<EventLog>>, since: usize) -> impl Stream<Item = Event> {
    let rx = log.lock().expect("event log lock").tx.subscribe();
    stream::unfold((rx, since, log, false), |(mut rx, next, log, done)| async move {
        if done {
            return None;
        }
        loop {
            let batch: Vec<Event> = {
                let l = log.lock().expect("event log lock");
                l.events.get(next..).map(<[Event]>::to_vec).unwrap_or_default()
            };
            if !batch.is_empty() {
                let ended = batch.iter().any(|e| matches!(e.action, Action::SessionEnd { .. }));
                let next = next + batch.len();
                return Some((stream::iter(batch), (rx, next, log, ended)));
            }
            match rx.recv().await {
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
    .flatten()
}

async fn session_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    let since = q.since.unwrap_or(0) as usize;
    match q.format.as_deref() {
        Some("json") => {
            let log = handle.log.lock().expect("event log lock");
            let events: Vec<Event> = log.events.get(since..).map(<[Event]>::to_vec).unwrap_or_default();
            Ok(Json(events).into_response())
        }
        None | Some("sse") => {
            let s = event_stream(handle.log.clone(), since).map(|e| Ok::<_, Infallible>(sse_event(&e)));
            Ok(Sse::new(s).keep_alive(KeepAlive::default()).into_response())
        }
        Some(other) => Err(ApiError::unprocessable(format!("unknown format '{other}'"))),
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
