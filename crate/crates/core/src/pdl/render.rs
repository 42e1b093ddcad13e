use std::fmt::Write;

use super::document::{NodeDef, NodeKind, PdlDocument};
use super::procedure::render_procedure;

fn needs_quoting(v: &str) -> bool {
    v.is_empty()
        || v.trim() != v
        || v.contains('\n')
        || v.starts_with(['"', '\'', '[', '-', '#', '|', '>'])
        || (v.starts_with('{'))
}

fn scalar(v: &str) -> String {
    if needs_quoting(v) {
        serde_json::to_string(v).expect("string serializes")
    } else {
        v.to_string()
    }
}

fn list(items: &[String]) -> String {
    format!("[{}]", items.join(", "))
}

fn render_node(out: &mut String, n: &NodeDef) {
    let _ = writeln!(out, "  - name: {}", n.name);
    if let Some(d) = &n.desc {
        let _ = writeln!(out, "    desc: {}", scalar(d));
    }
    match n.kind {
        NodeKind::Api => {
            let _ = writeln!(out, "    request: {}", list(&n.request_slots));
            let _ = writeln!(out, "    response: {}", list(&n.response_slots));
            let _ = writeln!(out, "    precondition: {}", list(&n.preconditions));
        }
        NodeKind::Answer => {
            if !n.request_slots.is_empty() {
                let _ = writeln!(out, "    request: {}", list(&n.request_slots));
            }
            if !n.response_slots.is_empty() {
                let _ = writeln!(out, "    response: {}", list(&n.response_slots));
            }
            if !n.preconditions.is_empty() {
                let _ = writeln!(out, "    precondition: {}", list(&n.preconditions));
            }
        }
    }
}

/// Canonical text form of a document: meta, APIs, ANSWERs, Procedure.
///
/// Parsing the output yields a document equal to the input, and rendering
/// that document again yields identical bytes.
pub fn render_for_prompt(doc: &PdlDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Name: {}", scalar(&doc.name));
    let _ = writeln!(out, "Desc: {}", scalar(&doc.desc));
    if let Some(d) = &doc.detailed_desc {
        let _ = writeln!(out, "Detailed_desc: {}", scalar(d));
    }
    out.push('\n');
    if doc.api_nodes.is_empty() {
        out.push_str("APIs: []\n");
    } else {
        out.push_str("APIs:\n");
        doc.api_nodes.iter().for_each(|n| render_node(&mut out, n));
    }
    out.push('\n');
    if doc.answer_nodes.is_empty() {
        out.push_str("ANSWERs: []\n");
    } else {
        out.push_str("ANSWERs:\n");
        doc.answer_nodes.iter().for_each(|n| render_node(&mut out, n));
    }
    out.push('\n');
    out.push_str("Procedure: |\n");
    for line in render_procedure(&doc.procedure_ast).lines() {
        let _ = writeln!(out, "  {line}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdl::parse_pdl;

    #[test]
    fn empty_answers_section_is_explicit() {
        let doc = parse_pdl("Name: t\nDesc: d\nAPIs:\n  - name: a\nProcedure: |\n  API.a()\n").unwrap();
        let text = render_for_prompt(&doc);
        assert!(text.contains("\nANSWERs: []\n"), "{text}");
        assert_eq!(parse_pdl(&text).unwrap(), doc);
    }

    #[test]
    fn awkward_scalars_survive() {
        let doc = parse_pdl(
            "Name: \"[odd] name\"\nDesc: \"  padded  \"\nAPIs: []\nANSWERs:\n  - name: a\n    desc: \"'quoted'\"\nProcedure: |\n  ANSWER.a()\n",
        )
        .unwrap();
        assert_eq!(doc.name, "[odd] name");
        let text = render_for_prompt(&doc);
        let again = parse_pdl(&text).unwrap();
        assert_eq!(again, doc);
        assert_eq!(render_for_prompt(&again), text);
    }
}
