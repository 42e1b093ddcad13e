mod common;

use std::sync::Arc;

use common::*;
use pdl_agent::config::BackendSpec;
use pdl_agent::eval::TurnRole;
use pdl_agent::run::{simulate_run, AgentSetup, NamedBackend, SimulationSetup};
use pdl_agent::runtime::action::{Action, OowKind};
use pdl_agent::runtime::agent::{Agent, AgentKind};
use pdl_agent::runtime::backend::ScriptedBackend;
use pdl_agent::runtime::labeler::Labeler;
use pdl_agent::runtime::registry::ToolRegistry;
use pdl_agent::sim::{run_session, OowInjector, OowSpec, SimConfig, UserProfile, UserSimulator};
use proptest::prelude::*;

fn script(name: &str) -> Vec<String> {
    serde_json::from_str(&fixture_text(name)).unwrap()
}

fn hospital_pair() -> (Agent, UserSimulator) {
    let wf = workflow("hospital.pdl");
    let registry = ToolRegistry::from_file(&fixture("hospital_tools.json")).unwrap();
    let agent = Agent::new(
        AgentKind::Flowagent,
        wf.clone(),
        Arc::new(ScriptedBackend::new(script("hospital_policy.json"))),
        Arc::new(registry),
    );
    let profile = UserProfile::load(&fixture("hospital_profile.json")).unwrap();
    let user = UserSimulator::new(
        Arc::new(ScriptedBackend::new(script("hospital_user.json"))),
        profile,
        wf.doc.desc.clone(),
    );
    (agent, user)
}

#[test]
fn happy_path_session() {
    let (agent, user) = hospital_pair();
    let s = run_session(&agent, &user, &SimConfig::default(), 7, 0);
    assert_eq!(s.session_id, "s7-000");
    assert_eq!(s.end_reason, "user_end");
    let calls: Vec<&str> = s
        .transcript
        .turns
        .iter()
        .filter_map(|t| t.tool_call.as_ref().map(|c| c.name.as_str()))
        .collect();
    assert_eq!(
        calls,
        ["check_hospital", "check_department", "query_appointment", "register_hospital"]
    );
    assert_eq!(s.transcript.turns.iter().filter(|t| t.role == TurnRole::User).count(), 2);
    assert!(matches!(s.actions().last(), Some(Action::SessionEnd { .. })));
    assert_eq!(count_violations(&agent.workflow, &s.actions()), 0);
}

#[test]
fn scheduled_oow_lands_on_the_named_turn() {
    let (agent, user) = hospital_pair();
    let cfg = SimConfig {
        oow: Some(OowSpec::at_turns(OowKind::ProcedureJumping, vec![2])),
        ..SimConfig::default()
    };
    let s = run_session(&agent, &user, &cfg, 1, 0);
    let annotations: Vec<Option<String>> = s
        .actions()
        .iter()
        .filter_map(|a| match a {
            Action::UserMessage { oow, .. } => Some(oow.as_ref().map(|o| o.to_string())),
            _ => None,
        })
        .collect();
    assert_eq!(annotations, [None, Some("procedure_jumping".to_string())]);
}

#[test]
fn turn_cap_ends_the_session() {
    let wf = workflow("hospital.pdl");
    let agent = dag_agent(
        wf,
        Arc::new(ScriptedBackend::new(vec!["Response: ok".into()]).repeat_last(true)),
        pdl_agent::controllers::ControllerConfig::default(),
    );
    let user = repeating_user("and then?");
    let s = simulate(&agent, &user, 3, 0);
    assert_eq!(s.end_reason, "turn_cap");
    let users = s.actions().iter().filter(|a| matches!(a, Action::UserMessage { .. })).count();
    assert_eq!(users, 3);
}

#[test]
fn run_directories_are_reproducible() {
    let wf_path = fixture("hospital.pdl");
    let (source, wf) = pdl_agent::run::load_workflow(&wf_path).unwrap();
    let scripted = |name: &str| {
        NamedBackend::new(
            name,
            BackendSpec::Scripted {
                path: fixture(name),
                repeat_last: None,
            },
        )
    };
    let setup = SimulationSetup {
        workflow_path: wf_path.clone(),
        workflow_source: source,
        agent: AgentSetup {
            kind: AgentKind::Flowagent,
            workflow: wf,
            backend: scripted("hospital_policy.json"),
            registry: Arc::new(ToolRegistry::from_file(&fixture("hospital_tools.json")).unwrap()),
            controllers: AgentKind::Flowagent.default_controllers(),
            labeler: Labeler::ExplicitOnly,
            current_time: None,
        },
        user_backend: scripted("hospital_user.json"),
        profile: UserProfile::load(&fixture("hospital_profile.json")).unwrap(),
        session_judge: Some(scripted("hospital_judge.json")),
        sim: SimConfig {
            oow: Some(OowSpec::with_probability(0.5)),
            ..SimConfig::default()
        },
        sessions: 3,
        seed: 42,
    };
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate_run(&setup, &tmp.path().join("a")).unwrap();
    let b = simulate_run(&setup, &tmp.path().join("b")).unwrap();
    assert_eq!(a.manifest.sessions.len(), 3);
    for s in &a.manifest.sessions {
        let ta = std::fs::read(tmp.path().join("a").join(&s.transcript)).unwrap();
        let tb = std::fs::read(tmp.path().join("b").join(&s.transcript)).unwrap();
        assert_eq!(ta, tb);
    }
    let (ra, rb) = (a.report.unwrap(), b.report.unwrap());
    assert_eq!(ra.summary, rb.summary);
    let m = &ra.summary;
    assert_eq!(m.iw.counts.sessions + m.oow.counts.sessions, 3);
    assert!(simulate_run(&setup, &tmp.path().join("a")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn injection_is_a_function_of_the_seed(seed in any::<u64>(), p in 0.0f64..1.0) {
        let fire = |seed| {
            let mut inj = OowInjector::new(OowSpec::with_probability(p), seed);
            (1..=40).map(|t| inj.fire(t).map(|f| f.annotation)).collect::<Vec<_>>()
        };
        let a = fire(seed);
        prop_assert_eq!(&a, &fire(seed));
        for f in a.iter().flatten() {
            prop_assert!(OowKind::ALL.contains(&f.kind));
        }
    }

    #[test]
    fn simulated_sessions_are_deterministic(seed in 0u64..1000) {
        let (agent, user) = hospital_pair();
        let cfg = SimConfig { oow: Some(OowSpec::with_probability(0.4)), ..SimConfig::default() };
        let a = run_session(&agent, &user, &cfg, seed, 0);
        let (agent, user) = hospital_pair();
        let b = run_session(&agent, &user, &cfg, seed, 0);
        prop_assert_eq!(a.events_jsonl(), b.events_jsonl());
    }
}
