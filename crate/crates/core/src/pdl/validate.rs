use std::collections::{BTreeMap, BTreeSet};

use super::diagnostic::{codes, Diagnostic};
use super::document::{placeholders, NodeKind, PdlDocument};
use super::graph::DependencyGraph;
use super::procedure::Namespace;

/// Cross-reference and well-formedness checks over a parsed document.
pub fn validate(doc: &PdlDocument) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = doc.parse_warnings.clone();

    let mut declared: BTreeMap<&str, NodeKind> = BTreeMap::new();
    for n in doc.nodes() {
        if declared.insert(n.name.as_str(), n.kind).is_some() {
            out.push(Diagnostic::error(
                codes::DUPLICATE_NODE,
                format!("node '{}' is declared more than once", n.name),
                n.pos.line,
                n.pos.col,
            ));
        }
        if n.kind == NodeKind::Answer && !n.response_slots.is_empty() {
            out.push(Diagnostic::error(
                codes::ANSWER_RESPONSE_SLOTS,
                format!("ANSWER node '{}' cannot declare response slots", n.name),
                n.pos.line,
                n.pos.col,
            ));
        }
    }

    let mut edges: Vec<(&str, &str)> = Vec::new();
    for n in doc.nodes() {
        for p in &n.preconditions {
            if declared.contains_key(p.as_str()) {
                edges.push((n.name.as_str(), p.as_str()));
            } else {
                out.push(Diagnostic::error(
                    codes::UNKNOWN_PRECONDITION,
                    format!("node '{}' has unknown precondition '{}'", n.name, p),
                    n.pos.line,
                    n.pos.col,
                ));
            }
        }
    }
    let names: BTreeSet<&str> = declared.keys().copied().collect();
    match DependencyGraph::from_edges(names, &edges) {
        Ok(_) => {}
        Err(super::graph::GraphError::Cycle(cycle)) => {
            let first = cycle.first().and_then(|n| doc.node(n));
            let (line, col) = first.map_or((1, 1), |n| (n.pos.line, n.pos.col));
            out.push(Diagnostic::error(
                codes::CYCLE,
                format!("precondition cycle: {}", cycle.join(" -> ")),
                line,
                col,
            ));
        }
        Err(e) => out.push(Diagnostic::error(codes::UNKNOWN_PRECONDITION, e.to_string(), 1, 1)),
    }

    let mut referenced: BTreeSet<&str> = BTreeSet::new();
    for (ns, name, pos) in doc.procedure_ast.node_calls() {
        match (ns, declared.get(name)) {
            (Some(ns), Some(kind)) => {
                referenced.insert(name);
                let expected = match kind {
                    NodeKind::Api => Namespace::Api,
                    NodeKind::Answer => Namespace::Answer,
                };
                if ns != expected {
                    out.push(Diagnostic::error(
                        codes::NAMESPACE_MISMATCH,
                        format!(
                            "'{}.{}' refers to a node declared as {}",
                            ns.as_str(),
                            name,
                            kind.as_str()
                        ),
                        pos.line,
                        pos.col,
                    ));
                }
            }
            (Some(ns), None) => out.push(Diagnostic::error(
                codes::UNKNOWN_NODE_REFERENCE,
                format!("unknown node reference '{}.{}'", ns.as_str(), name),
                pos.line,
                pos.col,
            )),
            (None, Some(_)) => {
                referenced.insert(name);
            }
            (None, None) => out.push(Diagnostic::warning(
                codes::UNRESOLVED_CALL,
                format!("call to '{name}' does not name a declared node"),
                pos.line,
                pos.col,
            )),
        }
    }

    for n in doc.nodes() {
        if !referenced.contains(n.name.as_str()) {
            out.push(Diagnostic::warning(
                codes::UNUSED_NODE,
                format!("node '{}' is never referenced in the procedure", n.name),
                n.pos.line,
                n.pos.col,
            ));
        }
    }

    let mut used: BTreeSet<String> = doc
        .procedure_ast
        .identifiers()
        .into_iter()
        .map(str::to_string)
        .collect();
    for a in &doc.answer_nodes {
        for p in a.desc.as_deref().map(placeholders).unwrap_or_default() {
            // `$node-slot` refers to slot `slot` of node `node`
            let slot = p.rsplit('-').next().unwrap_or(&p).to_string();
            used.insert(slot);
            used.insert(p);
        }
    }
    for n in doc.nodes() {
        for s in n.request_slots.iter().chain(&n.response_slots) {
            if !used.contains(s) {
                out.push(Diagnostic::warning(
                    codes::UNUSED_SLOT,
                    format!("slot '{}' of node '{}' is never used", s, n.name),
                    n.pos.line,
                    n.pos.col,
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdl::{has_errors, parse_pdl};

    fn errors(src: &str) -> Vec<Diagnostic> {
        validate(&parse_pdl(src).unwrap())
            .into_iter()
            .filter(Diagnostic::is_error)
            .collect()
    }

    #[test]
    fn self_loop_reports_cycle() {
        let e = errors("Name: t\nAPIs:\n  - name: x\n    precondition: [x]\nANSWERs: []\nProcedure: |\n  API.x()\n");
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].code, codes::CYCLE);
        assert_eq!((e[0].line, e[0].col), (3, 5));
    }

    #[test]
    fn dangling_call() {
        let e = errors("Name: t\nAPIs: []\nANSWERs: []\nProcedure: |\n  x = API.unknown_api(a)\n");
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].code, codes::UNKNOWN_NODE_REFERENCE);
        assert_eq!((e[0].line, e[0].col), (5, 7));
    }

    #[test]
    fn duplicates_unknown_preconditions_and_namespace() {
        let src = "Name: t\nAPIs:\n  - name: a\n    precondition: [ghost]\n  - name: a\nANSWERs:\n  - name: r\n    response: [z]\nProcedure: |\n  API.r()\n";
        let codes_seen: Vec<String> = errors(src).into_iter().map(|d| d.code).collect();
        for c in [
            codes::DUPLICATE_NODE,
            codes::UNKNOWN_PRECONDITION,
            codes::ANSWER_RESPONSE_SLOTS,
            codes::NAMESPACE_MISMATCH,
        ] {
            assert!(codes_seen.iter().any(|s| s == c), "missing {c} in {codes_seen:?}");
        }
    }

    #[test]
    fn warnings_for_unused() {
        let doc = parse_pdl("Name: t\nAPIs:\n  - name: a\n    request: [q]\n  - name: b\nANSWERs: []\nProcedure: |\n  API.a()\n  helper()\n").unwrap();
        let d = validate(&doc);
        assert!(!has_errors(&d));
        let codes_seen: Vec<&str> = d.iter().map(|d| d.code.as_str()).collect();
        assert!(codes_seen.contains(&codes::UNUSED_NODE));
        assert!(codes_seen.contains(&codes::UNUSED_SLOT));
        assert!(codes_seen.contains(&codes::UNRESOLVED_CALL));
    }
}
