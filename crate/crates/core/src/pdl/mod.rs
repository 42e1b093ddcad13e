//! Procedure Description Language: document model, parser, validator,
//! canonical renderer and the precondition graph.

mod diagnostic;
mod document;
mod graph;
mod procedure;
mod render;
mod validate;

pub use diagnostic::{codes, has_errors, Diagnostic, Severity};
pub use document::{is_identifier, parse_pdl, placeholders, NodeDef, NodeKind, PdlDocument};
pub use graph::{build_dependency_graph, Accessibility, DependencyGraph, GraphError};
pub use procedure::{
    parse_procedure, render_expr, render_procedure, CompareOp, Expr, Namespace, Pos, ProcedureAst,
    Stmt,
};
pub use render::render_for_prompt;
pub use validate::validate;

/// Every diagnostic for a source text: parse errors, or the validator's
/// findings.
pub fn check(source: &str) -> Vec<Diagnostic> {
    match parse_pdl(source) {
        Ok(doc) => validate(&doc),
        Err(diags) => diags,
    }
}

/// A document that parsed and validated without errors, together with its
/// compiled graph.
#[derive(Debug, Clone)]
pub struct Workflow {
    pub doc: PdlDocument,
    pub graph: DependencyGraph,
    pub warnings: Vec<Diagnostic>,
}

impl Workflow {
    /// Parses, validates and compiles. Any Error diagnostic rejects the
    /// document.
    pub fn load(source: &str) -> Result<Self, Vec<Diagnostic>> {
        let doc = parse_pdl(source)?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: PdlDocument) -> Result<Self, Vec<Diagnostic>> {
        let diags = validate(&doc);
        if has_errors(&diags) {
            return Err(diags);
        }
        let graph = build_dependency_graph(&doc)
            .map_err(|e| vec![Diagnostic::error(codes::CYCLE, e.to_string(), 1, 1)])?;
        Ok(Self {
            doc,
            graph,
            warnings: diags,
        })
    }
}
