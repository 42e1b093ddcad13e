mod common;

use common::*;
use pdl_agent::runtime::prompt::{
    FLOWAGENT_TEMPLATE, REACT_TEMPLATE, SESSION_JUDGE_TEMPLATE, TURN_JUDGE_TEMPLATE, USER_SIMULATION_TEMPLATE,
};

#[test]
fn rendered_prompts_match_golden_files() {
    check_prompts().unwrap();
}

#[test]
fn templates_carry_their_headers() {
    let templates = [
        ("flowagent", FLOWAGENT_TEMPLATE),
        ("react", REACT_TEMPLATE),
        ("user_simulation", USER_SIMULATION_TEMPLATE),
        ("turn_judge", TURN_JUDGE_TEMPLATE),
        ("session_judge", SESSION_JUDGE_TEMPLATE),
    ];
    for (kind, template) in templates {
        let headers = PROMPT_HEADERS.iter().find(|(k, _)| *k == kind).unwrap().1;
        for h in headers {
            assert!(template.lines().any(|l| l == *h), "{kind}: {h:?}");
        }
    }
}

#[test]
fn no_placeholder_survives_rendering() {
    for (kind, text) in sample_prompts() {
        assert!(!text.contains("{{"), "{kind} prompt still has a placeholder");
    }
}

#[test]
fn agent_prompts_show_state() {
    let prompts = sample_prompts();
    let flow = &prompts[0].1;
    assert!(flow.contains("Executed nodes: check_hospital"));
    assert!(flow.contains("- Accessible nodes:"));
    assert!(flow.contains("[blocked: requires check_department]"));
    assert!(flow.contains("USER: I want a dermatology appointment"));
    let user = &prompts[2].1;
    assert!(!user.contains("check_hospital"), "the user simulator must not see tool traffic");
}
