//! Alternative textual workflow formats used by the ReAct baselines.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::pdl::{render_expr, render_for_prompt, render_procedure, Expr, NodeKind, PdlDocument, Stmt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowFormat {
    Nl,
    Code,
    Flowchart,
    Pdl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedWorkflow {
    pub format: WorkflowFormat,
    pub text: String,
}

pub fn render(doc: &PdlDocument, format: WorkflowFormat) -> RenderedWorkflow {
    match format {
        WorkflowFormat::Nl => render_nl(doc),
        WorkflowFormat::Code => render_code(doc),
        WorkflowFormat::Flowchart => render_flowchart(doc),
        WorkflowFormat::Pdl => RenderedWorkflow {
            format,
            text: render_for_prompt(doc),
        },
    }
}

fn node_call(e: &Expr) -> Option<(&str, &[Expr])> {
    match e {
        Expr::NodeCall { name, args, .. } | Expr::Call { name, args, .. } => Some((name, args)),
        _ => None,
    }
}

fn stmt_call(s: &Stmt) -> Option<(&str, &[Expr], &[String])> {
    match s {
        Stmt::Assign { targets, value, .. } => node_call(value).map(|(n, a)| (n, a, targets.as_slice())),
        Stmt::ExprStmt(e) => node_call(e).map(|(n, a)| (n, a, &[][..])),
        _ => None,
    }
}

fn arg_names(args: &[Expr]) -> Vec<String> {
    let mut out = Vec::new();
    for a in args {
        match a {
            Expr::BracketList(items) => out.extend(arg_names(items)),
            other => out.push(render_expr(other)),
        }
    }
    out
}

struct NlWriter<'a> {
    doc: &'a PdlDocument,
    steps: Vec<String>,
    notes: Vec<String>,
}

impl NlWriter<'_> {
    fn step(&mut self, conditions: &[String], body: String) {
        let mut s = String::new();
        if !conditions.is_empty() {
            let _ = write!(s, "If {}, ", conditions.join(" and "));
        }
        s.push_str(&body);
        if !self.notes.is_empty() {
            let _ = write!(s, " (Note: {}.)", self.notes.join("; "));
            self.notes.clear();
        }
        self.steps.push(s);
    }

    fn call_text(&self, name: &str, args: &[Expr], targets: &[String]) -> String {
        match self.doc.node(name) {
            Some(n) if n.kind == NodeKind::Answer => match &n.desc {
                Some(d) => format!("reply to the user ({name}): \"{d}\""),
                None => format!("reply to the user ({name})."),
            },
            Some(n) => {
                let mut s = format!("call the API {name}");
                let inputs = if n.request_slots.is_empty() {
                    arg_names(args)
                } else {
                    n.request_slots.clone()
                };
                if !inputs.is_empty() {
                    let _ = write!(s, " with {}", inputs.join(", "));
                }
                if !targets.is_empty() {
                    let _ = write!(s, " to obtain {}", targets.join(", "));
                }
                if let Some(d) = &n.desc {
                    let _ = write!(s, ". {d}");
                } else {
                    s.push('.');
                }
                s
            }
            None if !targets.is_empty() => {
                format!("ask the user for {} ({name}).", targets.join(", "))
            }
            None => format!("perform {name}."),
        }
    }

    fn block(&mut self, block: &[Stmt], conditions: &mut Vec<String>) {
        for s in block {
            if let Some((name, args, targets)) = stmt_call(s) {
                let text = self.call_text(name, args, targets);
                self.step(conditions, text);
                continue;
            }
            match s {
                Stmt::Comment(c) => {
                    if !c.trim().is_empty() {
                        self.notes.push(c.trim().to_string());
                    }
                }
                Stmt::If {
                    branches,
                    else_block,
                } => {
                    let mut previous = Vec::new();
                    for (cond, body) in branches {
                        let c = render_expr(cond);
                        conditions.push(c.clone());
                        self.block(body, conditions);
                        conditions.pop();
                        previous.push(c);
                    }
                    if let Some(b) = else_block {
                        conditions.push(format!("none of ({}) hold", previous.join("; ")));
                        self.block(b, conditions);
                        conditions.pop();
                    }
                }
                Stmt::While { condition, body } => {
                    conditions.push(format!("while {}", render_expr(condition)));
                    self.block(body, conditions);
                    conditions.pop();
                }
                Stmt::TryExcept {
                    try_block,
                    except_block,
                } => {
                    self.block(try_block, conditions);
                    conditions.push("the previous step fails".into());
                    self.block(except_block, conditions);
                    conditions.pop();
                }
                Stmt::Assign { targets, value, .. } => {
                    let body = format!("set {} to {}.", targets.join(", "), render_expr(value));
                    self.step(conditions, body);
                }
                Stmt::ExprStmt(e) => {
                    let body = format!("evaluate {}.", render_expr(e));
                    self.step(conditions, body);
                }
            }
        }
    }
}

/// Numbered prose steps, one per procedure statement that does something.
pub fn render_nl(doc: &PdlDocument) -> RenderedWorkflow {
    let mut w = NlWriter {
        doc,
        steps: Vec::new(),
        notes: Vec::new(),
    };
    w.block(&doc.procedure_ast.statements, &mut Vec::new());
    let mut text = format!("Workflow: {}\n{}\n", doc.name, doc.desc);
    if let Some(d) = &doc.detailed_desc {
        let _ = writeln!(text, "{d}");
    }
    text.push_str("\nSteps:\n");
    for (i, s) in w.steps.iter().enumerate() {
        let _ = writeln!(text, "{}. {}", i + 1, capitalize(s));
    }
    let dependent: Vec<_> = doc.nodes().filter(|n| !n.preconditions.is_empty()).collect();
    if !dependent.is_empty() {
        text.push_str("\nRequirements:\n");
        for n in dependent {
            let _ = writeln!(text, "- {} may only happen after {}.", n.name, n.preconditions.join(", "));
        }
    }
    RenderedWorkflow {
        format: WorkflowFormat::Nl,
        text,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// The procedure as Python, preceded by one stub per API node.
pub fn render_code(doc: &PdlDocument) -> RenderedWorkflow {
    let mut text = format!("# {}\n# {}\n\n", doc.name, doc.desc);
    for n in &doc.api_nodes {
        let _ = writeln!(text, "def {}({}):", n.name, n.request_slots.join(", "));
        let mut doc_lines = Vec::new();
        if let Some(d) = &n.desc {
            doc_lines.push(d.clone());
        }
        if !n.response_slots.is_empty() {
            doc_lines.push(format!("Returns: {}", n.response_slots.join(", ")));
        }
        if !n.preconditions.is_empty() {
            doc_lines.push(format!("Requires: {}", n.preconditions.join(", ")));
        }
        if !doc_lines.is_empty() {
            let _ = writeln!(text, "    \"\"\"{}\"\"\"", doc_lines.join("\n    "));
        }
        text.push_str("    ...\n\n");
    }
    if !doc.answer_nodes.is_empty() {
        text.push_str("ANSWERS = {\n");
        for n in &doc.answer_nodes {
            let d = n.desc.as_deref().unwrap_or("");
            let _ = writeln!(text, "    \"{}\": {},", n.name, serde_json::to_string(d).expect("string"));
        }
        text.push_str("}\n\n");
    }
    text.push_str("def procedure():\n");
    for line in render_procedure(&doc.procedure_ast).lines() {
        let _ = writeln!(text, "    {line}");
    }
    RenderedWorkflow {
        format: WorkflowFormat::Code,
        text,
    }
}

fn mermaid_label(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

#[derive(Default)]
struct FlowEdges {
    edges: Vec<(String, String, Option<String>)>,
    seen: BTreeSet<(String, String, Option<String>)>,
}

impl FlowEdges {
    fn add(&mut self, from: &str, to: &str, label: Option<String>) {
        let e = (from.to_string(), to.to_string(), label);
        if self.seen.insert(e.clone()) {
            self.edges.push(e);
        }
    }

    /// Links `prev` to every node call in `block`; returns the exits.
    fn walk(&mut self, doc: &PdlDocument, block: &[Stmt], prev: Vec<String>, mut label: Option<String>) -> Vec<String> {
        let mut prev = prev;
        for s in block {
            if let Some((name, _, _)) = stmt_call(s) {
                if doc.node(name).is_none() {
                    continue;
                }
                for p in &prev {
                    self.add(p, name, label.clone());
                }
                label = None;
                prev = vec![name.to_string()];
                continue;
            }
            match s {
                Stmt::If {
                    branches,
                    else_block,
                } => {
                    let mut exits = Vec::new();
                    for (cond, body) in branches {
                        exits.extend(self.walk(doc, body, prev.clone(), Some(render_expr(cond))));
                    }
                    match else_block {
                        Some(b) => exits.extend(self.walk(doc, b, prev.clone(), Some("else".into()))),
                        None => exits.extend(prev.iter().cloned()),
                    }
                    exits.dedup();
                    prev = exits;
                    label = None;
                }
                Stmt::While { condition, body } => {
                    let exits = self.walk(doc, body, prev.clone(), Some(render_expr(condition)));
                    prev.extend(exits);
                    prev.dedup();
                }
                Stmt::TryExcept {
                    try_block,
                    except_block,
                } => {
                    let mut exits = self.walk(doc, try_block, prev.clone(), label.clone());
                    exits.extend(self.walk(doc, except_block, prev.clone(), Some("on failure".into())));
                    exits.dedup();
                    prev = exits;
                    label = None;
                }
                _ => {}
            }
        }
        prev
    }
}

/// Mermaid-style graph: node shapes, precondition edges and labeled
/// procedure flow edges.
pub fn render_flowchart(doc: &PdlDocument) -> RenderedWorkflow {
    let mut text = String::from("flowchart TD\n");
    for n in doc.nodes() {
        let shape = match n.kind {
            NodeKind::Api => format!("{}[\"API: {}\"]", n.name, n.name),
            NodeKind::Answer => format!("{}([\"ANSWER: {}\"])", n.name, n.name),
        };
        let _ = writeln!(text, "    {shape}");
    }
    text.push_str("    %% preconditions\n");
    let mut dependency_edges = BTreeSet::new();
    for n in doc.nodes() {
        for p in &n.preconditions {
            let _ = writeln!(text, "    {p} --> {}", n.name);
            dependency_edges.insert((p.clone(), n.name.clone()));
        }
    }
    let mut flow = FlowEdges::default();
    flow.walk(doc, &doc.procedure_ast.statements, Vec::new(), None);
    text.push_str("    %% procedure flow\n");
    for (from, to, label) in &flow.edges {
        match label {
            Some(l) => {
                let _ = writeln!(text, "    {from} -->|{}| {to}", mermaid_label(l));
            }
            None if dependency_edges.contains(&(from.clone(), to.clone())) => {}
            None => {
                let _ = writeln!(text, "    {from} -.-> {to}");
            }
        }
    }
    RenderedWorkflow {
        format: WorkflowFormat::Flowchart,
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdl::parse_pdl;

    fn hospital() -> PdlDocument {
        parse_pdl(include_str!("../fixtures/hospital.pdl")).unwrap()
    }

    #[test]
    fn flowchart_has_precondition_edges() {
        let f = render_flowchart(&hospital()).text;
        assert!(f.starts_with("flowchart TD\n"));
        assert!(f.lines().any(|l| l.trim() == "check_hospital --> check_department"));
        assert!(f.contains("check_hospital -->|\"hospital_exists == false\"| hospital_not_found"));
    }

    #[test]
    fn code_has_stub_signatures() {
        let c = render_code(&hospital()).text;
        assert!(c.contains(
            "def register_hospital(id_number, appointment_type, hospital_name, department_name, appointment_time):"
        ));
        assert!(c.contains("def procedure():\n    [hospital_exists] = API.check_hospital([hospital_name])"));
    }

    #[test]
    fn single_node_nl_has_one_step() {
        let doc = parse_pdl("Name: t\nDesc: d\nAPIs:\n  - name: a\nANSWERs: []\nProcedure: |\n  API.a()\n").unwrap();
        let nl = render_nl(&doc).text;
        let steps = nl
            .lines()
            .filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.parse::<usize>().is_ok()))
            .count();
        assert_eq!(steps, 1, "{nl}");
    }

    #[test]
    fn nl_carries_conditions_and_comments() {
        let doc = parse_pdl(include_str!("../fixtures/apartment_viewing.pdl")).unwrap();
        let nl = render_nl(&doc).text;
        assert!(nl.contains("If Status == \"Available\", call the API book_apartment_viewing"));
        assert!(nl.contains("(Note: confirm with the user before booking.)"));
        assert!(nl.contains("- viewing_booked may only happen after book_apartment_viewing."));
    }

    #[test]
    fn every_format_renders_deterministically() {
        for src in [
            include_str!("../fixtures/hospital.pdl"),
            include_str!("../fixtures/hospital_fig2.pdl"),
            include_str!("../fixtures/apartment_viewing.pdl"),
        ] {
            let doc = parse_pdl(src).unwrap();
            for f in [WorkflowFormat::Nl, WorkflowFormat::Code, WorkflowFormat::Flowchart, WorkflowFormat::Pdl] {
                let a = render(&doc, f);
                assert_eq!(a, render(&doc, f));
                assert!(!a.text.is_empty());
            }
        }
    }
}
