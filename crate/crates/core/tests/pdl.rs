use std::collections::{BTreeMap, BTreeSet};

use pdl_agent::pdl::{
    build_dependency_graph, codes, has_errors, parse_pdl, render_for_prompt, validate, Accessibility,
    DependencyGraph, NodeKind,
};
use proptest::prelude::*;

const HOSPITAL: &str = include_str!("../fixtures/hospital.pdl");
const HOSPITAL_VERBATIM: &str = include_str!("../fixtures/hospital_verbatim.pdl");
const FIG2: &str = include_str!("../fixtures/hospital_fig2.pdl");
const APARTMENT: &str = include_str!("../fixtures/apartment_viewing.pdl");
const CYCLIC: &str = include_str!("../fixtures/cyclic.pdl");

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn hospital_document_shape() {
    let doc = parse_pdl(HOSPITAL).unwrap();
    assert_eq!(doc.name, "114 Hospital Appointment");
    let apis: Vec<&str> = doc.api_nodes.iter().map(|n| n.name.as_str()).collect();
    assert_eq!(
        apis,
        [
            "check_hospital",
            "check_department",
            "query_appointment",
            "recommend_other_hospitals",
            "register_hospital",
            "register_other_hospital"
        ]
    );
    let answers: Vec<&str> = doc.answer_nodes.iter().map(|n| n.name.as_str()).collect();
    assert_eq!(
        answers,
        [
            "hospital_not_found",
            "department_not_found",
            "no_available_slots",
            "appointment_successful",
            "appointment_failed",
            "other_hospital_appointment_successful",
            "other_hospital_appointment_failed",
            "answer_out_of_workflow_questions",
            "request_information"
        ]
    );
    assert!(doc.nodes().all(|n| n.kind == NodeKind::Api || n.response_slots.is_empty()));
    let register = doc.api("register_hospital").unwrap();
    assert_eq!(
        register.request_slots,
        ["id_number", "appointment_type", "hospital_name", "department_name", "appointment_time"]
    );
    assert_eq!(
        doc.api("query_appointment").unwrap().preconditions,
        ["check_hospital", "check_department"]
    );
    let diags = validate(&doc);
    assert!(!has_errors(&diags), "{diags:?}");
}

#[test]
fn verbatim_listing_flags_the_misspelled_answer_call() {
    let doc = parse_pdl(HOSPITAL_VERBATIM).unwrap();
    let errors: Vec<_> = validate(&doc).into_iter().filter(|d| d.is_error()).collect();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].code, codes::UNKNOWN_NODE_REFERENCE);
    assert!(errors[0].message.contains("pther_hospital_appointment_failed"));
    assert_eq!(errors[0].line, 74);
}

#[test]
fn terse_fragment() {
    let doc = parse_pdl(FIG2).unwrap();
    assert_eq!(doc.api("check_department").unwrap().preconditions, ["check_hospital"]);
    assert_eq!(
        doc.answer("inform_appointment_result").unwrap().preconditions,
        ["register_appointment"]
    );
    assert!(!has_errors(&validate(&doc)));

    let g = build_dependency_graph(&doc).unwrap();
    let order = g.topological_order().unwrap();
    let chain = [
        "check_hospital",
        "check_department",
        "query_appointment",
        "register_appointment",
        "recommend_other_hospitals",
    ];
    let positions: Vec<usize> = chain
        .iter()
        .map(|n| order.iter().position(|o| o == n).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{order:?}");
}

#[test]
fn hospital_graph_edges() {
    let doc = parse_pdl(HOSPITAL).unwrap();
    let g = build_dependency_graph(&doc).unwrap();
    assert_eq!(g.nodes.len(), 15);
    assert_eq!(g.preconditions("register_hospital").unwrap(), &set(&["query_appointment"]));
    assert_eq!(
        g.preconditions("query_appointment").unwrap(),
        &set(&["check_hospital", "check_department"])
    );
    let edges: usize = doc.nodes().map(|n| n.preconditions.len()).sum();
    assert_eq!(g.edge_count(), edges);
}

#[test]
fn hospital_accessibility() {
    let doc = parse_pdl(HOSPITAL).unwrap();
    let g = build_dependency_graph(&doc).unwrap();

    let none: [&str; 0] = [];
    let acc = g.accessible_nodes(&none).unwrap();
    assert!(acc.accessible.contains("check_hospital"));
    for a in &doc.answer_nodes {
        assert!(acc.accessible.contains(&a.name));
    }
    assert_eq!(
        acc.blocked["query_appointment"],
        set(&["check_hospital", "check_department"])
    );

    let acc = g.accessible_nodes(&["check_hospital"]).unwrap();
    assert!(acc.accessible.contains("check_department"));
    assert_eq!(acc.blocked["register_hospital"], set(&["query_appointment"]));

    let acc = g.accessible_nodes(&["check_hospital", "check_department"]).unwrap();
    assert!(acc.accessible.contains("query_appointment"));
}

#[test]
fn edgeless_graph() {
    let doc = parse_pdl(
        "Name: t\nDesc: d\nAPIs:\n  - name: a\n  - name: b\nANSWERs:\n  - name: c\nProcedure: |\n  API.a()\n  API.b()\n  ANSWER.c()\n",
    )
    .unwrap();
    let g = build_dependency_graph(&doc).unwrap();
    assert_eq!(g.edge_count(), 0);
    assert_eq!(g.topological_order().unwrap(), ["a", "b", "c"]);
}

#[test]
fn cyclic_document_is_rejected() {
    let doc = parse_pdl(CYCLIC).unwrap();
    let diags = validate(&doc);
    assert!(diags.iter().any(|d| d.is_error() && d.code == codes::CYCLE));
    assert!(build_dependency_graph(&doc).is_err());
}

#[test]
fn round_trip_fixtures() {
    for src in [HOSPITAL, FIG2, APARTMENT, HOSPITAL_VERBATIM] {
        let doc = parse_pdl(src).unwrap();
        let text = render_for_prompt(&doc);
        let again = parse_pdl(&text).unwrap();
        assert_eq!(again, doc);
        assert_eq!(render_for_prompt(&again), text, "render is not a fixpoint");
        let reparsed = pdl_agent::pdl::parse_procedure(&doc.procedure_source).unwrap();
        assert_eq!(reparsed, doc.procedure_ast);
    }
}

#[test]
fn diagnostics_serialize_flat() {
    let doc = parse_pdl(CYCLIC).unwrap();
    let diags = validate(&doc);
    let json = serde_json::to_value(&diags).unwrap();
    let first = &json.as_array().unwrap()[0];
    let keys: BTreeSet<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["severity", "code", "message", "line", "col"]));
}

// ---------------------------------------------------------------------------
// Brute-force oracles

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn respects(order: &[String], g: &DependencyGraph) -> bool {
    let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    g.edges
        .iter()
        .all(|(n, pres)| pres.iter().all(|p| pos[p.as_str()] < pos[n.as_str()]))
}

#[test]
fn diamond_order_matches_enumeration() {
    let g = DependencyGraph::from_edges(
        ["a", "b", "c", "d"],
        &[("b", "a"), ("c", "a"), ("d", "b"), ("d", "c")],
    )
    .unwrap();
    let nodes: Vec<String> = g.nodes.iter().cloned().collect();
    let valid: Vec<Vec<String>> = permutations(&nodes)
        .into_iter()
        .filter(|p| respects(p, &g))
        .collect();
    assert_eq!(valid.len(), 2);
    let order = g.topological_order().unwrap();
    assert!(valid.contains(&order));
    assert_eq!(order, ["a", "b", "c", "d"]);
    assert_eq!(&order, valid.iter().min().unwrap());
}

fn brute_accessibility(g: &DependencyGraph, executed: &BTreeSet<String>) -> Accessibility {
    let mut acc = Accessibility::default();
    for n in &g.nodes {
        let mut unmet = BTreeSet::new();
        for p in &g.edges[n] {
            if !executed.contains(p) {
                unmet.insert(p.clone());
            }
        }
        if unmet.is_empty() {
            acc.accessible.insert(n.clone());
        } else {
            acc.blocked.insert(n.clone(), unmet);
        }
    }
    acc
}

const NAMES: [&str; 8] = ["kilo", "alpha", "echo", "bravo", "hotel", "delta", "golf", "charlie"];

prop_compose! {
    fn random_dag(max: usize)(n in 1..=max)(
        n in Just(n),
        bits in proptest::collection::vec(any::<bool>(), n * n),
        shuffle in Just(()).prop_perturb(move |_, mut rng| {
            let mut idx: Vec<usize> = (0..8).collect();
            for i in (1..idx.len()).rev() {
                let j = (rng.next_u32() as usize) % (i + 1);
                idx.swap(i, j);
            }
            idx
        }),
    ) -> DependencyGraph {
        let names: Vec<&str> = shuffle.iter().take(n).map(|&i| NAMES[i]).collect();
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..j {
                if bits[i * n + j] {
                    edges.push((names[j], names[i]));
                }
            }
        }
        DependencyGraph::from_edges(names.clone(), &edges).unwrap()
    }
}

proptest! {
    #[test]
    fn accessibility_matches_brute_force(g in random_dag(8), mask in any::<u8>()) {
        let executed: BTreeSet<String> = g.nodes.iter().enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, n)| n.clone())
            .collect();
        let exec_vec: Vec<&String> = executed.iter().collect();
        let acc = g.accessible_nodes(&exec_vec).unwrap();
        prop_assert_eq!(&acc, &brute_accessibility(&g, &executed));

        // partition
        let mut all: BTreeSet<String> = acc.accessible.clone();
        for k in acc.blocked.keys() {
            prop_assert!(all.insert(k.clone()));
        }
        prop_assert_eq!(all, g.nodes.clone());
    }

    #[test]
    fn accessibility_is_monotone(g in random_dag(8), a in any::<u8>(), b in any::<u8>()) {
        let pick = |m: u8| -> Vec<String> {
            g.nodes.iter().enumerate().filter(|(i, _)| m & (1 << i) != 0).map(|(_, n)| n.clone()).collect()
        };
        let small = pick(a & b);
        let large = pick(a | (a & b));
        let s = g.accessible_nodes(&small).unwrap();
        let l = g.accessible_nodes(&large).unwrap();
        prop_assert!(s.accessible.is_subset(&l.accessible));
    }

    #[test]
    fn topological_order_is_smallest_valid(g in random_dag(6)) {
        let order = g.topological_order().unwrap();
        prop_assert_eq!(order.len(), g.nodes.len());
        prop_assert!(respects(&order, &g));
        let nodes: Vec<String> = g.nodes.iter().cloned().collect();
        let best = permutations(&nodes).into_iter().filter(|p| respects(p, &g)).min().unwrap();
        prop_assert_eq!(order, best);
    }
}
