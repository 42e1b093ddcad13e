//! C ABI over the PDL engine.
//!
//! Workflows are opaque handles. Every function returns a [`PdlStatus`];
//! on failure [`pdl_last_error`] describes the problem. Strings handed out
//! through `out` parameters are owned by the caller and released with
//! [`pdl_string_free`]. Structured results are JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pdl_agent::eval::{compute_metrics, SessionRecord, TurnRecord};
use pdl_agent::pdl::{check, render_for_prompt, Diagnostic, Workflow};
use serde_json::{json, Value};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// The document has syntax or validation errors.
    InvalidWorkflow = 3,
    InvalidJson = 4,
    UnknownNode = 5,
    Internal = 6,
}

/// A parsed, validated and compiled workflow.
pub struct PdlWorkflow(Workflow);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PdlStatus, String);

impl Failure {
    fn new(status: PdlStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("no interior nul"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            PdlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            PdlStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(PdlStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(PdlStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a>(wf: *const PdlWorkflow) -> Result<&'a Workflow, Failure> {
    wf.as_ref()
        .map(|w| &w.0)
        .ok_or_else(|| Failure::new(PdlStatus::NullArgument, "workflow is null"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(PdlStatus::NullArgument, "out is null"));
    }
    let c = CString::new(s).map_err(|e| Failure::new(PdlStatus::Internal, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::new(PdlStatus::InvalidJson, format!("{what}: {e}")))
}

fn first_error(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .find(|d| d.is_error())
        .map(|d| format!("{}:{}: {}: {}", d.line, d.col, d.code, d.message))
        .unwrap_or_else(|| "invalid workflow".into())
}

/// Message for the most recent failure on this thread, or null after a
/// success. Valid until the next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn pdl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses, validates and compiles `source`. On success `*out` receives a
/// handle to release with [`pdl_workflow_free`].
///
/// # Safety
/// `source` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_workflow_load(source: *const c_char, out: *mut *mut PdlWorkflow) -> PdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(PdlStatus::NullArgument, "out is null"));
        }
        *out = ptr::null_mut();
        let source = read_str(source, "source")?;
        let wf = Workflow::load(source).map_err(|d| Failure::new(PdlStatus::InvalidWorkflow, first_error(&d)))?;
        *out = Box::into_raw(Box::new(PdlWorkflow(wf)));
        Ok(())
    })
}

/// # Safety
/// `wf` must come from [`pdl_workflow_load`] and not be freed twice. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn pdl_workflow_free(wf: *mut PdlWorkflow) {
    if !wf.is_null() {
        drop(Box::from_raw(wf));
    }
}

/// All diagnostics for `source` as `{"valid", "errors", "warnings"}`.
/// Returns `PDL_STATUS_OK` even when the document is invalid.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_check_json(source: *const c_char, out: *mut *mut c_char) -> PdlStatus {
    guard(|| {
        let source = read_str(source, "source")?;
        let (errors, warnings): (Vec<_>, Vec<_>) = check(source).into_iter().partition(Diagnostic::is_error);
        let body = json!({"valid": errors.is_empty(), "errors": errors, "warnings": warnings});
        write_string(out, body.to_string())
    })
}

/// The workflow as it appears in agent prompts.
///
/// # Safety
/// `wf` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_workflow_render(wf: *const PdlWorkflow, out: *mut *mut c_char) -> PdlStatus {
    guard(|| {
        let wf = handle(wf)?;
        write_string(out, render_for_prompt(&wf.doc))
    })
}

/// `executed_json` is a JSON array of node names. The result is
/// `{"accessible": [...], "blocked": {node: [unmet, ...]}}`.
///
/// # Safety
/// `wf` must be a live handle, `executed_json` a nul-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_workflow_accessible_json(
    wf: *const PdlWorkflow,
    executed_json: *const c_char,
    out: *mut *mut c_char,
) -> PdlStatus {
    guard(|| {
        let wf = handle(wf)?;
        let executed: Vec<String> = parse_json(read_str(executed_json, "executed_json")?, "executed_json")?;
        let acc = wf
            .graph
            .accessible_nodes(&executed)
            .map_err(|e| Failure::new(PdlStatus::UnknownNode, e.to_string()))?;
        write_string(out, serde_json::to_string(&acc).expect("serializable"))
    })
}

/// Node names in dependency order, as a JSON array.
///
/// # Safety
/// `wf` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_workflow_topological_order_json(
    wf: *const PdlWorkflow,
    out: *mut *mut c_char,
) -> PdlStatus {
    guard(|| {
        let wf = handle(wf)?;
        let order = wf
            .graph
            .topological_order()
            .map_err(|e| Failure::new(PdlStatus::Internal, e.to_string()))?;
        write_string(out, Value::from(order).to_string())
    })
}

/// Aggregates turn and session records (JSON arrays in the evaluator's
/// record format; either may be null for none) into the metrics summary.
///
/// # Safety
/// Non-null string arguments must be nul-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_compute_metrics_json(
    turns_json: *const c_char,
    sessions_json: *const c_char,
    out: *mut *mut c_char,
) -> PdlStatus {
    guard(|| {
        let turns: Vec<TurnRecord> = if turns_json.is_null() {
            Vec::new()
        } else {
            parse_json(read_str(turns_json, "turns_json")?, "turns_json")?
        };
        let sessions: Vec<SessionRecord> = if sessions_json.is_null() {
            Vec::new()
        } else {
            parse_json(read_str(sessions_json, "sessions_json")?, "sessions_json")?
        };
        let summary = compute_metrics(&turns, &sessions);
        write_string(out, serde_json::to_string(&summary).expect("serializable"))
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pdl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
