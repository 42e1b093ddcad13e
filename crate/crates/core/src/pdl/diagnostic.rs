use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

/// One finding against a PDL source, positioned at a 1-based line/column.
///
/// Serializes flat as `{severity, code, message, line, col}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub line: usize,
    pub col: usize,
}

impl Diagnostic {
    pub fn error(code: &str, message: impl Into<String>, line: usize, col: usize) -> Self {
        Self {
            severity: Severity::Error,
            code: code.to_string(),
            message: message.into(),
            line,
            col,
        }
    }

    pub fn warning(code: &str, message: impl Into<String>, line: usize, col: usize) -> Self {
        Self {
            severity: Severity::Warning,
            code: code.to_string(),
            message: message.into(),
            line,
            col,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {}[{}]: {}",
            self.line, self.col, sev, self.code, self.message
        )
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

/// Diagnostic codes emitted by the parser and validator.
pub mod codes {
    pub const SYNTAX: &str = "syntax-error";
    pub const INDENTATION: &str = "indentation-error";
    pub const MISSING_PROCEDURE: &str = "missing-procedure";
    pub const MISSING_NAME: &str = "missing-name";
    pub const DUPLICATE_NODE: &str = "duplicate-node";
    pub const UNKNOWN_PRECONDITION: &str = "unknown-precondition";
    pub const UNKNOWN_NODE_REFERENCE: &str = "unknown-node-reference";
    pub const NAMESPACE_MISMATCH: &str = "namespace-mismatch";
    pub const CYCLE: &str = "cycle";
    pub const ANSWER_RESPONSE_SLOTS: &str = "answer-response-slots";
    pub const UNUSED_NODE: &str = "unused-node";
    pub const UNUSED_SLOT: &str = "unused-slot";
    pub const UNRESOLVED_CALL: &str = "unresolved-call";
    pub const ELIDED: &str = "elided-content";
}
