//! Document shell: meta information, node declarations and the procedure
//! block scalar. The shell is a YAML-compatible subset parsed line by line
//! so every diagnostic carries a precise location.

use serde::{Deserialize, Serialize};

use super::diagnostic::{codes, Diagnostic};
use super::procedure::{parse_procedure_at, Pos, ProcedureAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "API")]
    Api,
    #[serde(rename = "ANSWER")]
    Answer,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Api => "API",
            NodeKind::Answer => "ANSWER",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDef {
    pub kind: NodeKind,
    pub name: String,
    /// For ANSWER nodes this is the response template (`$slot` placeholders).
    pub desc: Option<String>,
    pub request_slots: Vec<String>,
    pub response_slots: Vec<String>,
    pub preconditions: Vec<String>,
    #[serde(skip)]
    pub pos: Pos,
}

impl NodeDef {
    pub fn new(kind: NodeKind, name: impl Into<String>) -> Self {
        Self {
            kind,
            name: name.into(),
            desc: None,
            request_slots: Vec::new(),
            response_slots: Vec::new(),
            preconditions: Vec::new(),
            pos: Pos::default(),
        }
    }

    /// `$slot` and `$node-slot` placeholders in the template, in order.
    pub fn template_placeholders(&self) -> Vec<String> {
        self.desc.as_deref().map(placeholders).unwrap_or_default()
    }
}

/// Tokenizes `$name` / `$node-slot` placeholders out of an answer template.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = template.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if c != '$' {
            continue;
        }
        let mut name = String::new();
        while let Some(&(_, d)) = chars.peek() {
            if d.is_alphanumeric() || d == '_' || d == '-' {
                name.push(d);
                chars.next();
            } else {
                break;
            }
        }
        let name = name.trim_end_matches('-').to_string();
        if !name.is_empty() {
            out.push(name);
        }
    }
    out
}

/// A parsed workflow.
///
/// Equality is structural: the procedure is compared by AST, so formatting
/// differences in `procedure_source` and parse warnings are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdlDocument {
    pub name: String,
    pub desc: String,
    pub detailed_desc: Option<String>,
    pub api_nodes: Vec<NodeDef>,
    pub answer_nodes: Vec<NodeDef>,
    pub procedure_source: String,
    pub procedure_ast: ProcedureAst,
    #[serde(skip)]
    pub parse_warnings: Vec<Diagnostic>,
}

impl PartialEq for PdlDocument {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.desc == other.desc
            && self.detailed_desc == other.detailed_desc
            && self.api_nodes == other.api_nodes
            && self.answer_nodes == other.answer_nodes
            && self.procedure_ast == other.procedure_ast
    }
}

impl Eq for PdlDocument {}

impl PdlDocument {
    pub fn nodes(&self) -> impl Iterator<Item = &NodeDef> {
        self.api_nodes.iter().chain(self.answer_nodes.iter())
    }

    pub fn node(&self, name: &str) -> Option<&NodeDef> {
        self.nodes().find(|n| n.name == name)
    }

    pub fn api(&self, name: &str) -> Option<&NodeDef> {
        self.api_nodes.iter().find(|n| n.name == name)
    }

    pub fn answer(&self, name: &str) -> Option<&NodeDef> {
        self.answer_nodes.iter().find(|n| n.name == name)
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| *c == ' ').count()
}

/// Unquotes a scalar that is entirely wrapped in matching quotes.
pub(crate) fn unquote(v: &str) -> String {
    let v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        if let Ok(s) = serde_json::from_str::<String>(v) {
            return s;
        }
        return v[1..v.len() - 1].to_string();
    }
    if v.len() >= 2 && v.starts_with('\'') && v.ends_with('\'') {
        return v[1..v.len() - 1].replace("''", "'");
    }
    v.to_string()
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Apis,
    Answers,
}

#[derive(Clone, Copy)]
enum ListField {
    Request,
    Response,
    Precondition,
}

struct ShellParser<'s> {
    lines: Vec<&'s str>,
    diags: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
}

const TOP_KEYS: &[&str] = &[
    "Name",
    "Desc",
    "Detailed_desc",
    "Desc_detail",
    "APIs",
    "ANSWERs",
    "Procedure",
];

fn top_key(key: &str, indent: usize) -> Option<&'static str> {
    if let Some(k) = TOP_KEYS.iter().find(|k| **k == key) {
        return Some(k);
    }
    if indent == 0 {
        let lower = key.to_ascii_lowercase();
        return match lower.as_str() {
            "name" => Some("Name"),
            "desc" => Some("Desc"),
            "detailed_desc" | "desc_detail" => Some("Detailed_desc"),
            "apis" => Some("APIs"),
            "answers" => Some("ANSWERs"),
            "procedure" => Some("Procedure"),
            _ => None,
        };
    }
    None
}

/// Splits `key: value` at the first `:` that is followed by a space or EOL.
fn split_key(s: &str) -> Option<(&str, &str)> {
    let bytes = s.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') {
            let key = s[..i].trim();
            if key.is_empty() || key.contains(' ') {
                return None;
            }
            return Some((key, s[i + 1..].trim()));
        }
    }
    None
}

impl<'s> ShellParser<'s> {
    fn syntax(&mut self, msg: impl Into<String>, line: usize, col: usize) {
        self.diags
            .push(Diagnostic::error(codes::SYNTAX, msg, line + 1, col));
    }

    fn flow_list(&mut self, v: &str, line: usize, col: usize) -> Vec<String> {
        let v = v.trim();
        if !(v.starts_with('[') && v.ends_with(']')) {
            self.syntax(format!("expected a [..] list, found '{v}'"), line, col);
            return Vec::new();
        }
        let inner = v[1..v.len() - 1].trim();
        if inner.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for item in inner.split(',') {
            let name = unquote(item);
            if !is_identifier(&name) {
                self.syntax(format!("'{}' is not a valid identifier", name), line, col);
                continue;
            }
            out.push(name);
        }
        out
    }

    fn run(mut self) -> Result<PdlDocument, Vec<Diagnostic>> {
        let mut name: Option<String> = None;
        let mut desc: Option<String> = None;
        let mut detailed: Option<String> = None;
        let mut apis: Vec<NodeDef> = Vec::new();
        let mut answers: Vec<NodeDef> = Vec::new();
        let mut procedure: Option<(String, ProcedureAst)> = None;
        let mut saw_procedure_key = false;

        let mut section = Section::Top;
        // index into the current section's list of the node being filled
        let mut current: Option<usize> = None;
        let mut item_indent = 0usize;
        // block-style list under a node field: (field, indent of the key)
        let mut block_list: Option<(ListField, usize)> = None;

        let mut i = 0;
        while i < self.lines.len() {
            let raw = self.lines[i];
            let trimmed = raw.trim();
            let ln = i;
            i += 1;
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed == "---" {
                continue;
            }
            if raw[..raw.len() - raw.trim_start().len()].contains('\t') {
                self.diags.push(Diagnostic::error(
                    codes::INDENTATION,
                    "tab character in indentation; use spaces",
                    ln + 1,
                    1,
                ));
                continue;
            }
            if trimmed == "..." {
                self.warnings.push(Diagnostic::warning(
                    codes::ELIDED,
                    "elided content marker '...' ignored",
                    ln + 1,
                    indent_of(raw) + 1,
                ));
                continue;
            }
            let indent = indent_of(raw);

            // continuation of a block-style list
            if let Some((field, key_indent)) = block_list {
                if let Some(item) = trimmed.strip_prefix("- ").or(if trimmed == "-" { Some("") } else { None }) {
                    if indent >= key_indent && split_key(item).is_none() {
                        let v = unquote(item);
                        if !is_identifier(&v) {
                            self.syntax(format!("'{v}' is not a valid identifier"), ln, indent + 3);
                        } else if let Some(node) = current_node(section, current, &mut apis, &mut answers) {
                            field_vec(node, field).push(v);
                        }
                        continue;
                    }
                }
                block_list = None;
            }

            let (is_item, body, body_col) = match trimmed.strip_prefix("- ") {
                Some(rest) => (true, rest.trim_start(), indent + 1 + (trimmed.len() - rest.trim_start().len())),
                None => (false, trimmed, indent + 1),
            };

            let Some((key, value)) = split_key(body) else {
                self.syntax(format!("expected 'key: value', found '{trimmed}'"), ln, indent + 1);
                continue;
            };

            if !is_item {
                if let Some(k) = top_key(key, indent) {
                    current = None;
                    match k {
                        "Name" => name = Some(unquote(value)),
                        "Desc" => desc = Some(unquote(value)),
                        "Detailed_desc" | "Desc_detail" => detailed = Some(unquote(value)),
                        "APIs" | "ANSWERs" => {
                            section = if k == "APIs" { Section::Apis } else { Section::Answers };
                            if !value.is_empty() && value != "[]" {
                                self.syntax(format!("'{k}' must be followed by a list of nodes"), ln, body_col);
                            }
                        }
                        _ => {
                            section = Section::Top;
                            saw_procedure_key = true;
                            let (text, first, block_indent, consumed) = self.block_scalar(i, indent, value, ln);
                            i += consumed;
                            if let Some(text) = text {
                                match parse_procedure_at(&text, first, block_indent) {
                                    Ok(ast) => procedure = Some((text, ast)),
                                    Err(mut d) => self.diags.append(&mut d),
                                }
                            }
                        }
                    }
                    continue;
                }
            }

            if section == Section::Top {
                if is_item {
                    self.syntax("list item outside of an APIs/ANSWERs section", ln, indent + 1);
                } else {
                    self.warnings.push(Diagnostic::warning(
                        codes::SYNTAX,
                        format!("unknown top-level key '{key}' ignored"),
                        ln + 1,
                        indent + 1,
                    ));
                }
                continue;
            }

            let kind = if section == Section::Apis { NodeKind::Api } else { NodeKind::Answer };
            if is_item {
                if key != "name" {
                    self.syntax("each node must start with '- name: ...'", ln, body_col);
                    current = None;
                    continue;
                }
                let n = unquote(value);
                if !is_identifier(&n) {
                    self.syntax(format!("'{n}' is not a valid node name"), ln, body_col);
                }
                let mut node = NodeDef::new(kind, n);
                node.pos = Pos { line: ln + 1, col: body_col };
                let list = if kind == NodeKind::Api { &mut apis } else { &mut answers };
                list.push(node);
                current = Some(list.len() - 1);
                item_indent = indent;
                continue;
            }

            let Some(node) = current_node(section, current, &mut apis, &mut answers) else {
                self.syntax(format!("field '{key}' outside of a node definition"), ln, indent + 1);
                continue;
            };
            if indent <= item_indent {
                self.syntax(format!("field '{key}' must be indented under its '- name:' line"), ln, indent + 1);
                continue;
            }
            let field = match key {
                "desc" | "description" => {
                    node.desc = Some(unquote(value));
                    continue;
                }
                "request" | "request_slots" => ListField::Request,
                "response" | "response_slots" => ListField::Response,
                "precondition" | "preconditions" | "pre" => ListField::Precondition,
                other => {
                    self.warnings.push(Diagnostic::warning(
                        codes::SYNTAX,
                        format!("unknown node field '{other}' ignored"),
                        ln + 1,
                        indent + 1,
                    ));
                    continue;
                }
            };
            if value.is_empty() {
                block_list = Some((field, indent));
                continue;
            }
            let items = self.flow_list(value, ln, body_col + key.len() + 2);
            let node = current_node(section, current, &mut apis, &mut answers).expect("checked above");
            *field_vec(node, field) = items;
        }

        if !saw_procedure_key {
            self.diags.push(Diagnostic::error(
                codes::MISSING_PROCEDURE,
                "document has no 'Procedure' block",
                self.lines.len().max(1),
                1,
            ));
        }
        if name.is_none() {
            self.warnings.push(Diagnostic::warning(
                codes::MISSING_NAME,
                "document has no 'Name'",
                1,
                1,
            ));
        }
        if !self.diags.is_empty() {
            return Err(self.diags);
        }
        let (procedure_source, procedure_ast) = procedure.unwrap_or_default();
        Ok(PdlDocument {
            name: name.unwrap_or_default(),
            desc: desc.unwrap_or_default(),
            detailed_desc: detailed,
            api_nodes: apis,
            answer_nodes: answers,
            procedure_source,
            procedure_ast,
            parse_warnings: self.warnings,
        })
    }

    /// Reads the lines of a `|` block scalar starting at `start`.
    /// Returns (text, line offset of first content line, block indent, lines consumed).
    fn block_scalar(
        &mut self,
        start: usize,
        key_indent: usize,
        header: &str,
        key_line: usize,
    ) -> (Option<String>, usize, usize, usize) {
        if !(header.is_empty() || matches!(header, "|" | "|-" | "|+")) {
            self.syntax(
                "'Procedure' must be a block scalar ('Procedure: |' followed by indented lines)",
                key_line,
                key_indent + 1,
            );
            return (None, 0, 0, 0);
        }
        let mut end = start;
        let mut block_indent: Option<usize> = None;
        while end < self.lines.len() {
            let l = self.lines[end];
            if l.trim().is_empty() {
                end += 1;
                continue;
            }
            let ind = l.len() - l.trim_start().len();
            if ind <= key_indent {
                break;
            }
            if block_indent.is_none() {
                block_indent = Some(ind);
            }
            end += 1;
        }
        // trailing blank lines belong to whatever follows
        while end > start && self.lines[end - 1].trim().is_empty() {
            end -= 1;
        }
        let Some(bi) = block_indent else {
            return (Some(String::new()), start, 0, end - start);
        };
        let mut text = String::new();
        for (k, l) in self.lines[start..end].iter().enumerate() {
            if l.trim().is_empty() {
                text.push('\n');
                continue;
            }
            let lead = &l[..l.len() - l.trim_start().len()];
            if lead.len() < bi {
                self.diags.push(Diagnostic::error(
                    codes::INDENTATION,
                    "procedure line is less indented than the start of the block",
                    start + k + 1,
                    lead.len() + 1,
                ));
                continue;
            }
            text.push_str(&l[bi..]);
            text.push('\n');
        }
        (Some(text), start, bi, end - start)
    }
}

fn current_node<'a>(
    section: Section,
    current: Option<usize>,
    apis: &'a mut [NodeDef],
    answers: &'a mut [NodeDef],
) -> Option<&'a mut NodeDef> {
    let idx = current?;
    match section {
        Section::Apis => apis.get_mut(idx),
        Section::Answers => answers.get_mut(idx),
        Section::Top => None,
    }
}

fn field_vec(node: &mut NodeDef, f: ListField) -> &mut Vec<String> {
    match f {
        ListField::Request => &mut node.request_slots,
        ListField::Response => &mut node.response_slots,
        ListField::Precondition => &mut node.preconditions,
    }
}

/// Parses a complete PDL document. Cross-reference checks are left to
/// [`super::validate`].
pub fn parse_pdl(source: &str) -> Result<PdlDocument, Vec<Diagnostic>> {
    let source = source.strip_prefix('\u{feff}').unwrap_or(source);
    let parser = ShellParser {
        lines: source.lines().collect(),
        diags: Vec::new(),
        warnings: Vec::new(),
    };
    parser.run()
}
