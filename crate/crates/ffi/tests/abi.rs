use std::ffi::{c_char, CStr, CString};
use std::ptr;

use pdl_agent_ffi::*;
use serde_json::Value;

fn hospital() -> CString {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/hospital.pdl");
    CString::new(std::fs::read_to_string(path).unwrap()).unwrap()
}

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { pdl_string_free(s) };
    out
}

fn last_error() -> Option<String> {
    let p = pdl_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn load(src: &CString) -> *mut PdlWorkflow {
    let mut wf = ptr::null_mut();
    assert_eq!(unsafe { pdl_workflow_load(src.as_ptr(), &mut wf) }, PdlStatus::Ok);
    assert!(!wf.is_null());
    wf
}

fn accessible(wf: *const PdlWorkflow, executed: &str) -> (PdlStatus, Option<Value>) {
    let executed = CString::new(executed).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { pdl_workflow_accessible_json(wf, executed.as_ptr(), &mut out) };
    (status, (status == PdlStatus::Ok).then(|| serde_json::from_str(&take(out)).unwrap()))
}

#[test]
fn load_render_and_free() {
    let wf = load(&hospital());
    assert_eq!(last_error(), None);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pdl_workflow_render(wf, &mut out) }, PdlStatus::Ok);
    let text = take(out);
    assert!(text.contains("check_hospital"), "{text}");
    unsafe { pdl_workflow_free(wf) };
    unsafe { pdl_workflow_free(ptr::null_mut()) };
}

#[test]
fn accessibility_follows_the_graph() {
    let wf = load(&hospital());
    let (status, v) = accessible(wf, "[]");
    assert_eq!(status, PdlStatus::Ok);
    let v = v.unwrap();
    let open: Vec<&str> = v["accessible"].as_array().unwrap().iter().map(|n| n.as_str().unwrap()).collect();
    assert!(open.contains(&"check_hospital"));
    assert_eq!(v["blocked"]["check_department"], serde_json::json!(["check_hospital"]));

    let (_, v) = accessible(wf, r#"["check_hospital"]"#);
    assert!(v.unwrap()["blocked"].get("check_department").is_none());

    let (status, _) = accessible(wf, r#"["nope"]"#);
    assert_eq!(status, PdlStatus::UnknownNode);
    assert!(last_error().unwrap().contains("nope"));
    let (status, _) = accessible(wf, "{");
    assert_eq!(status, PdlStatus::InvalidJson);
    unsafe { pdl_workflow_free(wf) };
}

#[test]
fn topological_order_respects_preconditions() {
    let wf = load(&hospital());
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pdl_workflow_topological_order_json(wf, &mut out) }, PdlStatus::Ok);
    let order: Vec<String> = serde_json::from_str(&take(out)).unwrap();
    let pos = |n: &str| order.iter().position(|o| o == n).unwrap();
    assert!(pos("check_hospital") < pos("check_department"));
    assert!(pos("query_appointment") < pos("register_hospital"));
    unsafe { pdl_workflow_free(wf) };
}

#[test]
fn invalid_documents_report_diagnostics() {
    let src = CString::new("Name: x\nDesc: y\nAPIs:\n  - name: a\n    precondition: [b]\n").unwrap();
    let mut wf = 1 as *mut PdlWorkflow;
    assert_eq!(unsafe { pdl_workflow_load(src.as_ptr(), &mut wf) }, PdlStatus::InvalidWorkflow);
    assert!(wf.is_null());
    assert!(last_error().is_some());

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pdl_check_json(src.as_ptr(), &mut out) }, PdlStatus::Ok);
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["valid"], false);
    assert!(!v["errors"].as_array().unwrap().is_empty());

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pdl_check_json(hospital().as_ptr(), &mut out) }, PdlStatus::Ok);
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["valid"], true);
}

#[test]
fn null_and_bad_utf8_arguments() {
    let mut wf = ptr::null_mut();
    assert_eq!(unsafe { pdl_workflow_load(ptr::null(), &mut wf) }, PdlStatus::NullArgument);
    assert_eq!(unsafe { pdl_workflow_load(hospital().as_ptr(), ptr::null_mut()) }, PdlStatus::NullArgument);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pdl_workflow_render(ptr::null(), &mut out) }, PdlStatus::NullArgument);
    let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
    assert_eq!(unsafe { pdl_check_json(bad.as_ptr(), &mut out) }, PdlStatus::InvalidUtf8);
    unsafe { pdl_string_free(ptr::null_mut()) };
}

#[test]
fn metrics_over_the_abi() {
    let turns = CString::new(
        r#"[{"session_id":"s","turn_index":1,"kind":"response","oow":false,"consistent":true,
            "reference_items":[],"predicted_items":[],
            "predicted":{"type":"BotResponse","payload":{"text":"hi"}}},
           {"session_id":"s","turn_index":3,"kind":"response","oow":true,"consistent":false,
            "reference_items":[],"predicted_items":[],
            "predicted":{"type":"BotResponse","payload":{"text":"hi"}}}]"#,
    )
    .unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { pdl_compute_metrics_json(turns.as_ptr(), ptr::null(), &mut out) };
    assert_eq!(status, PdlStatus::Ok, "{:?}", last_error());
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["overall"]["pass_rate"], 0.5);
    assert_eq!(v["iw"]["pass_rate"], 1.0);
    assert_eq!(v["oow"]["pass_rate"], 0.0);

    let mut out = ptr::null_mut();
    let status = unsafe { pdl_compute_metrics_json(ptr::null(), ptr::null(), &mut out) };
    assert_eq!(status, PdlStatus::Ok);
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["overall"]["counts"]["turns"], 0);
}
