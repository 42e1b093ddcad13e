//! Pythonic procedure block: AST and an indentation-aware parser.
//!
//! The grammar accepts both the terse style (`hospital, department = ...`,
//! bare arguments) and the bracketed style (`[x] = API.f([a, b])`). Free
//! natural language is only legal inside `#` comments.

use serde::{Deserialize, Serialize};

use super::diagnostic::{codes, Diagnostic};

/// Source position of a call site.
///
/// Positions are metadata: two `Pos` values always compare equal, so ASTs
/// parsed from differently formatted sources are structurally comparable.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Pos {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl Eq for Pos {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Namespace {
    #[serde(rename = "API")]
    Api,
    #[serde(rename = "ANSWER")]
    Answer,
}

impl Namespace {
    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Api => "API",
            Namespace::Answer => "ANSWER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Gt => ">",
            CompareOp::Lt => "<",
            CompareOp::Ge => ">=",
            CompareOp::Le => "<=",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CompareOp::Eq,
            "!=" => CompareOp::Ne,
            ">" => CompareOp::Gt,
            "<" => CompareOp::Lt,
            ">=" => CompareOp::Ge,
            "<=" => CompareOp::Le,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    NodeCall {
        namespace: Namespace,
        name: String,
        args: Vec<Expr>,
        #[serde(skip)]
        pos: Pos,
    },
    /// Un-namespaced call such as `query_appointment(hospital)`.
    Call {
        name: String,
        args: Vec<Expr>,
        #[serde(skip)]
        pos: Pos,
    },
    Identifier(String),
    StringLit(String),
    /// Kept as source text so rendering is exact.
    NumberLit(String),
    BoolLit(bool),
    Compare {
        op: CompareOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    BracketList(Vec<Expr>),
    /// `...` placeholder for elided arguments.
    Ellipsis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stmt {
    Assign {
        targets: Vec<String>,
        /// `[a, b] = ...` rather than `a, b = ...`.
        bracketed: bool,
        value: Expr,
    },
    If {
        branches: Vec<(Expr, Vec<Stmt>)>,
        else_block: Option<Vec<Stmt>>,
    },
    While {
        condition: Expr,
        body: Vec<Stmt>,
    },
    TryExcept {
        try_block: Vec<Stmt>,
        except_block: Vec<Stmt>,
    },
    ExprStmt(Expr),
    Comment(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureAst {
    pub statements: Vec<Stmt>,
}

impl ProcedureAst {
    /// Every node call site in source order.
    pub fn node_calls(&self) -> Vec<(Option<Namespace>, &str, Pos)> {
        let mut out = Vec::new();
        for s in &self.statements {
            collect_stmt(s, &mut out);
        }
        out
    }

    /// Every identifier mentioned anywhere (targets, operands, arguments).
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for s in &self.statements {
            idents_stmt(s, &mut out);
        }
        out
    }

    /// Comment texts in source order, without the leading `#`.
    pub fn comments(&self) -> Vec<&str> {
        fn walk<'a>(block: &'a [Stmt], out: &mut Vec<&'a str>) {
            for s in block {
                match s {
                    Stmt::Comment(c) => out.push(c),
                    Stmt::If {
                        branches,
                        else_block,
                    } => {
                        for (_, b) in branches {
                            walk(b, out);
                        }
                        if let Some(b) = else_block {
                            walk(b, out);
                        }
                    }
                    Stmt::While { body, .. } => walk(body, out),
                    Stmt::TryExcept {
                        try_block,
                        except_block,
                    } => {
                        walk(try_block, out);
                        walk(except_block, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.statements, &mut out);
        out
    }

    pub fn depth(&self) -> usize {
        fn block_depth(b: &[Stmt]) -> usize {
            b.iter()
                .map(|s| match s {
                    Stmt::If {
                        branches,
                        else_block,
                    } => {
                        let mut d = branches.iter().map(|(_, b)| block_depth(b)).max().unwrap_or(0);
                        if let Some(e) = else_block {
                            d = d.max(block_depth(e));
                        }
                        d + 1
                    }
                    Stmt::While { body, .. } => block_depth(body) + 1,
                    Stmt::TryExcept {
                        try_block,
                        except_block,
                    } => block_depth(try_block).max(block_depth(except_block)) + 1,
                    _ => 0,
                })
                .max()
                .unwrap_or(0)
        }
        block_depth(&self.statements)
    }
}

fn collect_stmt<'a>(s: &'a Stmt, out: &mut Vec<(Option<Namespace>, &'a str, Pos)>) {
    match s {
        Stmt::Assign { value, .. } => collect_expr(value, out),
        Stmt::If {
            branches,
            else_block,
        } => {
            for (c, b) in branches {
                collect_expr(c, out);
                b.iter().for_each(|s| collect_stmt(s, out));
            }
            if let Some(b) = else_block {
                b.iter().for_each(|s| collect_stmt(s, out));
            }
        }
        Stmt::While { condition, body } => {
            collect_expr(condition, out);
            body.iter().for_each(|s| collect_stmt(s, out));
        }
        Stmt::TryExcept {
            try_block,
            except_block,
        } => {
            try_block.iter().for_each(|s| collect_stmt(s, out));
            except_block.iter().for_each(|s| collect_stmt(s, out));
        }
        Stmt::ExprStmt(e) => collect_expr(e, out),
        Stmt::Comment(_) => {}
    }
}

fn collect_expr<'a>(e: &'a Expr, out: &mut Vec<(Option<Namespace>, &'a str, Pos)>) {
    match e {
        Expr::NodeCall {
            namespace,
            name,
            args,
            pos,
        } => {
            out.push((Some(*namespace), name, *pos));
            args.iter().for_each(|a| collect_expr(a, out));
        }
        Expr::Call { name, args, pos } => {
            out.push((None, name, *pos));
            args.iter().for_each(|a| collect_expr(a, out));
        }
        Expr::Compare { lhs, rhs, .. } | Expr::And(lhs, rhs) | Expr::Or(lhs, rhs) => {
            collect_expr(lhs, out);
            collect_expr(rhs, out);
        }
        Expr::Not(e) => collect_expr(e, out),
        Expr::BracketList(items) => items.iter().for_each(|a| collect_expr(a, out)),
        _ => {}
    }
}

fn idents_stmt<'a>(s: &'a Stmt, out: &mut Vec<&'a str>) {
    match s {
        Stmt::Assign { targets, value, .. } => {
            out.extend(targets.iter().map(String::as_str));
            idents_expr(value, out);
        }
        Stmt::If {
            branches,
            else_block,
        } => {
            for (c, b) in branches {
                idents_expr(c, out);
                b.iter().for_each(|s| idents_stmt(s, out));
            }
            if let Some(b) = else_block {
                b.iter().for_each(|s| idents_stmt(s, out));
            }
        }
        Stmt::While { condition, body } => {
            idents_expr(condition, out);
            body.iter().for_each(|s| idents_stmt(s, out));
        }
        Stmt::TryExcept {
            try_block,
            except_block,
        } => {
            try_block.iter().for_each(|s| idents_stmt(s, out));
            except_block.iter().for_each(|s| idents_stmt(s, out));
        }
        Stmt::ExprStmt(e) => idents_expr(e, out),
        Stmt::Comment(_) => {}
    }
}

fn idents_expr<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
    match e {
        Expr::Identifier(i) => out.push(i),
        Expr::NodeCall { args, .. } | Expr::Call { args, .. } | Expr::BracketList(args) => {
            args.iter().for_each(|a| idents_expr(a, out))
        }
        Expr::Compare { lhs, rhs, .. } | Expr::And(lhs, rhs) | Expr::Or(lhs, rhs) => {
            idents_expr(lhs, out);
            idents_expr(rhs, out);
        }
        Expr::Not(e) => idents_expr(e, out),
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(String),
    Op(&'static str),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Colon,
    Ellipsis,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

struct Line {
    /// 1-based line number in the procedure source.
    number: usize,
    indent: usize,
    tokens: Vec<Token>,
    /// Present when the whole line is a comment.
    comment: Option<String>,
}

struct LexError {
    col: usize,
    message: String,
}

fn lex_line(text: &str, start_col: usize) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut out: Vec<Token> = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        let col = start_col + i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        if c.is_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[s..i].iter().collect()),
                col,
            });
            continue;
        }
        let prev_is_operand = matches!(
            out.last().map(|t| &t.tok),
            Some(Tok::Ident(_) | Tok::Str(_) | Tok::Num(_) | Tok::RParen | Tok::RBracket)
        );
        if c.is_ascii_digit()
            || (c == '-' && !prev_is_operand && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let s = i;
            i += 1;
            let mut seen_dot = false;
            while i < chars.len() {
                let d = chars[i];
                if d.is_ascii_digit() {
                    i += 1;
                } else if d == '.'
                    && !seen_dot
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                {
                    seen_dot = true;
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Num(chars[s..i].iter().collect()),
                col,
            });
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let mut s = String::new();
            let mut closed = false;
            while i < chars.len() {
                let d = chars[i];
                if d == '\\' {
                    match chars.get(i + 1) {
                        Some('n') => s.push('\n'),
                        Some('t') => s.push('\t'),
                        Some(&e) => s.push(e),
                        None => break,
                    }
                    i += 2;
                    continue;
                }
                if d == quote {
                    closed = true;
                    i += 1;
                    break;
                }
                s.push(d);
                i += 1;
            }
            if !closed {
                return Err(LexError {
                    col,
                    message: "unterminated string literal".into(),
                });
            }
            out.push(Token {
                tok: Tok::Str(s),
                col,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, width) = match two.as_str() {
            "==" => (Tok::Op("=="), 2),
            "!=" => (Tok::Op("!="), 2),
            ">=" => (Tok::Op(">="), 2),
            "<=" => (Tok::Op("<="), 2),
            _ => match c {
                '.' if chars.get(i + 1) == Some(&'.') && chars.get(i + 2) == Some(&'.') => {
                    (Tok::Ellipsis, 3)
                }
                '.' => (Tok::Dot, 1),
                '>' => (Tok::Op(">"), 1),
                '<' => (Tok::Op("<"), 1),
                '=' => (Tok::Op("="), 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                '[' => (Tok::LBracket, 1),
                ']' => (Tok::RBracket, 1),
                ',' => (Tok::Comma, 1),
                ':' => (Tok::Colon, 1),
                other => {
                    return Err(LexError {
                        col,
                        message: format!("unexpected character '{other}'"),
                    })
                }
            },
        };
        out.push(Token { tok, col });
        i += width;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

/// Parses a standalone procedure block.
pub fn parse_procedure(source: &str) -> Result<ProcedureAst, Vec<Diagnostic>> {
    parse_procedure_at(source, 0, 0)
}

/// Parses a procedure whose first line sits at `line_offset` lines and
/// `col_offset` columns into an enclosing document, so diagnostics point
/// into that document.
pub(crate) fn parse_procedure_at(
    source: &str,
    line_offset: usize,
    col_offset: usize,
) -> Result<ProcedureAst, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let number = idx + 1 + line_offset;
        if raw.trim().is_empty() {
            continue;
        }
        let lead: String = raw.chars().take_while(|c| c.is_whitespace()).collect();
        if lead.contains('\t') {
            diags.push(Diagnostic::error(
                codes::INDENTATION,
                "tab character in indentation; use spaces",
                number,
                col_offset + lead.find('\t').unwrap_or(0) + 1,
            ));
            continue;
        }
        let indent = lead.chars().count();
        let rest = &raw[lead.len()..];
        if let Some(c) = rest.strip_prefix('#') {
            lines.push(Line {
                number,
                indent,
                tokens: Vec::new(),
                comment: Some(c.trim().to_string()),
            });
            continue;
        }
        match lex_line(rest, col_offset + indent + 1) {
            Ok(tokens) => lines.push(Line {
                number,
                indent,
                tokens,
                comment: None,
            }),
            Err(e) => diags.push(Diagnostic::error(codes::SYNTAX, e.message, number, e.col)),
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    let mut p = BlockParser {
        lines: &lines,
        idx: 0,
        col_offset,
        diags: Vec::new(),
    };
    let statements = if lines.is_empty() {
        Vec::new()
    } else {
        let base = lines[0].indent;
        let stmts = p.block(base);
        if p.idx < lines.len() {
            let l = &lines[p.idx];
            p.diags.push(Diagnostic::error(
                codes::INDENTATION,
                "unindent does not match any outer indentation level",
                l.number,
                col_offset + 1,
            ));
        }
        stmts
    };
    if p.diags.is_empty() {
        Ok(ProcedureAst { statements })
    } else {
        Err(p.diags)
    }
}

struct BlockParser<'a> {
    lines: &'a [Line],
    idx: usize,
    col_offset: usize,
    diags: Vec<Diagnostic>,
}

enum Header {
    If(Expr),
    Elif(Expr),
    Else,
    While(Expr),
    Try,
    Except,
}

impl<'a> BlockParser<'a> {
    fn err(&mut self, code: &str, msg: impl Into<String>, line: usize, col: usize) {
        self.diags.push(Diagnostic::error(code, msg, line, col));
    }

    /// Skips the current line and anything nested beneath it.
    fn skip_subtree(&mut self) {
        let indent = self.lines[self.idx].indent;
        self.idx += 1;
        while self.idx < self.lines.len() && self.lines[self.idx].indent > indent {
            self.idx += 1;
        }
    }

    fn block(&mut self, indent: usize) -> Vec<Stmt> {
        let mut out = Vec::new();
        while self.idx < self.lines.len() {
            let line = &self.lines[self.idx];
            if let Some(c) = &line.comment {
                if line.indent < indent {
                    break;
                }
                out.push(Stmt::Comment(c.clone()));
                self.idx += 1;
                continue;
            }
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                let (n, c) = (line.number, self.col_offset + 1);
                self.err(codes::INDENTATION, "unexpected indent", n, c);
                self.skip_subtree();
                continue;
            }
            if let Some(s) = self.statement(indent) {
                out.push(s);
            }
        }
        out
    }

    fn body(&mut self, header_indent: usize, header_line: usize) -> Vec<Stmt> {
        match self.lines.get(self.idx) {
            Some(l) if l.indent > header_indent => {
                let ind = l.indent;
                self.block(ind)
            }
            _ => {
                let c = self.col_offset + header_indent + 1;
                self.err(
                    codes::INDENTATION,
                    "expected an indented block",
                    header_line,
                    c,
                );
                Vec::new()
            }
        }
    }

    fn header(&mut self) -> Result<Option<Header>, Diagnostic> {
        let line = &self.lines[self.idx];
        let toks = &line.tokens;
        let kw = match toks.first() {
            Some(Token {
                tok: Tok::Ident(k), ..
            }) => k.as_str(),
            _ => return Ok(None),
        };
        if !matches!(kw, "if" | "elif" | "else" | "while" | "try" | "except") {
            return Ok(None);
        }
        let last = toks.last().expect("non-empty");
        if last.tok != Tok::Colon {
            return Err(Diagnostic::error(
                codes::SYNTAX,
                format!("expected ':' at end of '{kw}' line"),
                line.number,
                last.col,
            ));
        }
        let inner = &toks[1..toks.len() - 1];
        let cond = |p: &Self| -> Result<Expr, Diagnostic> {
            if inner.is_empty() {
                return Err(Diagnostic::error(
                    codes::SYNTAX,
                    format!("'{kw}' requires a condition"),
                    line.number,
                    toks[0].col,
                ));
            }
            p.expr_line(inner, line.number)
        };
        let h = match kw {
            "if" => Header::If(cond(self)?),
            "elif" => Header::Elif(cond(self)?),
            "while" => Header::While(cond(self)?),
            "else" | "try" => {
                if let Some(t) = inner.first() {
                    return Err(Diagnostic::error(
                        codes::SYNTAX,
                        format!("unexpected tokens after '{kw}'"),
                        line.number,
                        t.col,
                    ));
                }
                if kw == "else" {
                    Header::Else
                } else {
                    Header::Try
                }
            }
            _ => {
                // `except:` or `except SomeError:`
                let ok = inner.is_empty()
                    || (inner.len() == 1 && matches!(inner[0].tok, Tok::Ident(_)));
                if !ok {
                    return Err(Diagnostic::error(
                        codes::SYNTAX,
                        "malformed 'except' clause",
                        line.number,
                        inner[0].col,
                    ));
                }
                Header::Except
            }
        };
        Ok(Some(h))
    }

    fn statement(&mut self, indent: usize) -> Option<Stmt> {
        let line_no = self.lines[self.idx].number;
        let header = match self.header() {
            Ok(h) => h,
            Err(d) => {
                self.diags.push(d);
                self.skip_subtree();
                return None;
            }
        };
        let Some(header) = header else {
            let toks = &self.lines[self.idx].tokens;
            let res = self.simple(toks, line_no);
            self.idx += 1;
            return match res {
                Ok(s) => Some(s),
                Err(d) => {
                    self.diags.push(d);
                    // skip any block that a malformed header might own
                    while self.idx < self.lines.len() && self.lines[self.idx].indent > indent {
                        self.idx += 1;
                    }
                    None
                }
            };
        };
        self.idx += 1;
        match header {
            Header::If(cond) => {
                let mut branches = vec![(cond, self.body(indent, line_no))];
                let mut else_block = None;
                loop {
                    let Some(next) = self.lines.get(self.idx) else {
                        break;
                    };
                    if next.indent != indent || next.comment.is_some() {
                        break;
                    }
                    let n = next.number;
                    match self.header() {
                        Ok(Some(Header::Elif(c))) => {
                            self.idx += 1;
                            let b = self.body(indent, n);
                            branches.push((c, b));
                        }
                        Ok(Some(Header::Else)) => {
                            self.idx += 1;
                            else_block = Some(self.body(indent, n));
                            break;
                        }
                        Err(d) if matches!(next.tokens.first().map(|t| &t.tok), Some(Tok::Ident(k)) if k == "elif" || k == "else") =>
                        {
                            self.diags.push(d);
                            self.skip_subtree();
                        }
                        _ => break,
                    }
                }
                Some(Stmt::If {
                    branches,
                    else_block,
                })
            }
            Header::While(condition) => {
                let body = self.body(indent, line_no);
                Some(Stmt::While { condition, body })
            }
            Header::Try => {
                let try_block = self.body(indent, line_no);
                let next = self.lines.get(self.idx);
                let is_except = next.is_some_and(|l| {
                    l.indent == indent
                        && l.comment.is_none()
                        && matches!(l.tokens.first().map(|t| &t.tok), Some(Tok::Ident(k)) if k == "except")
                });
                if !is_except {
                    let c = self.col_offset + indent + 1;
                    self.err(codes::SYNTAX, "'try' block without 'except'", line_no, c);
                    return None;
                }
                let n = self.lines[self.idx].number;
                match self.header() {
                    Ok(Some(Header::Except)) => {
                        self.idx += 1;
                        let except_block = self.body(indent, n);
                        Some(Stmt::TryExcept {
                            try_block,
                            except_block,
                        })
                    }
                    Ok(_) => None,
                    Err(d) => {
                        self.diags.push(d);
                        self.skip_subtree();
                        None
                    }
                }
            }
            Header::Elif(_) | Header::Else | Header::Except => {
                let kw = match header {
                    Header::Elif(_) => "elif",
                    Header::Else => "else",
                    _ => "except",
                };
                let c = self.col_offset + indent + 1;
                self.err(
                    codes::SYNTAX,
                    format!("'{kw}' without a matching opening statement"),
                    line_no,
                    c,
                );
                while self.idx < self.lines.len() && self.lines[self.idx].indent > indent {
                    self.idx += 1;
                }
                None
            }
        }
    }

    fn simple(&self, toks: &[Token], line: usize) -> Result<Stmt, Diagnostic> {
        let assign_at = toks.iter().position(|t| t.tok == Tok::Op("="));
        let Some(eq) = assign_at else {
            return Ok(Stmt::ExprStmt(self.expr_line(toks, line)?));
        };
        let lhs = &toks[..eq];
        let rhs = &toks[eq + 1..];
        if rhs.is_empty() {
            return Err(Diagnostic::error(
                codes::SYNTAX,
                "missing value after '='",
                line,
                toks[eq].col,
            ));
        }
        let (inner, bracketed) = match (lhs.first(), lhs.last()) {
            (Some(f), Some(l)) if f.tok == Tok::LBracket && l.tok == Tok::RBracket => {
                (&lhs[1..lhs.len() - 1], true)
            }
            _ => (lhs, false),
        };
        let mut targets = Vec::new();
        let mut expect_name = true;
        for t in inner {
            match (&t.tok, expect_name) {
                (Tok::Ident(n), true) if !is_keyword(n) => {
                    targets.push(n.clone());
                    expect_name = false;
                }
                (Tok::Comma, false) => expect_name = true,
                _ => {
                    return Err(Diagnostic::error(
                        codes::SYNTAX,
                        "assignment target must be identifiers separated by commas",
                        line,
                        t.col,
                    ))
                }
            }
        }
        if targets.is_empty() || expect_name {
            let col = lhs.first().map_or(toks[eq].col, |t| t.col);
            return Err(Diagnostic::error(
                codes::SYNTAX,
                "missing assignment target",
                line,
                col,
            ));
        }
        Ok(Stmt::Assign {
            targets,
            bracketed,
            value: self.expr_line(rhs, line)?,
        })
    }

    fn expr_line(&self, toks: &[Token], line: usize) -> Result<Expr, Diagnostic> {
        let mut ep = ExprParser {
            toks,
            pos: 0,
            line,
        };
        let e = ep.or_expr()?;
        if let Some(t) = toks.get(ep.pos) {
            return Err(Diagnostic::error(
                codes::SYNTAX,
                format!(
                    "unexpected {}; free text is only allowed in '#' comments",
                    describe(&t.tok)
                ),
                line,
                t.col,
            ));
        }
        Ok(e)
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s,
        "if" | "elif" | "else" | "while" | "try" | "except" | "not" | "and" | "or"
    )
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("word '{s}'"),
        Tok::Str(_) => "string literal".into(),
        Tok::Num(n) => format!("number '{n}'"),
        Tok::Op(o) => format!("'{o}'"),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::LBracket => "'['".into(),
        Tok::RBracket => "']'".into(),
        Tok::Comma => "','".into(),
        Tok::Dot => "'.'".into(),
        Tok::Colon => "':'".into(),
        Tok::Ellipsis => "'...'".into(),
    }
}

struct ExprParser<'t> {
    toks: &'t [Token],
    pos: usize,
    line: usize,
}

impl<'t> ExprParser<'t> {
    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == w)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(1, |t| t.col)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, Diagnostic> {
        Err(Diagnostic::error(codes::SYNTAX, msg, self.line, self.col()))
    }

    fn or_expr(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.and_expr()?;
        while self.is_word("or") {
            self.pos += 1;
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.not_expr()?;
        while self.is_word("and") {
            self.pos += 1;
            let rhs = self.not_expr()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, Diagnostic> {
        if self.is_word("not") {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, Diagnostic> {
        let lhs = self.primary()?;
        if let Some(Tok::Op(o)) = self.peek() {
            if let Some(op) = CompareOp::from_symbol(o) {
                self.pos += 1;
                let rhs = self.primary()?;
                return Ok(Expr::Compare {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                });
            }
        }
        Ok(lhs)
    }

    fn args(&mut self, close: Tok) -> Result<Vec<Expr>, Diagnostic> {
        let mut items = Vec::new();
        loop {
            if self.peek() == Some(&close) {
                self.pos += 1;
                return Ok(items);
            }
            items.push(self.or_expr()?);
            match self.peek() {
                Some(Tok::Comma) => self.pos += 1,
                Some(t) if *t == close => {}
                Some(t) => return self.fail(format!("expected ',' or closing bracket, found {}", describe(t))),
                None => return self.fail("unclosed bracket"),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, Diagnostic> {
        let Some(tok) = self.toks.get(self.pos) else {
            return self.fail("unexpected end of line");
        };
        let pos = Pos {
            line: self.line,
            col: tok.col,
        };
        self.pos += 1;
        match &tok.tok {
            Tok::Str(s) => Ok(Expr::StringLit(s.clone())),
            Tok::Num(n) => Ok(Expr::NumberLit(n.clone())),
            Tok::Ellipsis => Ok(Expr::Ellipsis),
            Tok::LBracket => Ok(Expr::BracketList(self.args(Tok::RBracket)?)),
            Tok::LParen => {
                let e = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.fail("expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            Tok::Ident(w) => {
                match w.as_str() {
                    "true" | "True" => return Ok(Expr::BoolLit(true)),
                    "false" | "False" => return Ok(Expr::BoolLit(false)),
                    k if is_keyword(k) => {
                        self.pos -= 1;
                        return self.fail(format!("unexpected keyword '{k}'"));
                    }
                    _ => {}
                }
                let mut parts = vec![w.clone()];
                while self.peek() == Some(&Tok::Dot) {
                    self.pos += 1;
                    match self.peek() {
                        Some(Tok::Ident(n)) => {
                            parts.push(n.clone());
                            self.pos += 1;
                        }
                        _ => return self.fail("expected a name after '.'"),
                    }
                }
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.args(Tok::RParen)?;
                    let ns = match parts[0].as_str() {
                        "API" => Some(Namespace::Api),
                        "ANSWER" => Some(Namespace::Answer),
                        _ => None,
                    };
                    return Ok(match (ns, parts.len()) {
                        (Some(namespace), 2) => Expr::NodeCall {
                            namespace,
                            name: parts.pop().expect("two parts"),
                            args,
                            pos,
                        },
                        _ => Expr::Call {
                            name: parts.join("."),
                            args,
                            pos,
                        },
                    });
                }
                Ok(Expr::Identifier(parts.join(".")))
            }
            other => {
                self.pos -= 1;
                self.fail(format!("unexpected {}", describe(other)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering

/// Indentation unit used when rendering a procedure.
pub const INDENT: &str = "  ";

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Not(_) => 3,
        Expr::Compare { .. } => 4,
        _ => 5,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    let s = render_expr(e);
    if prec(e) < min {
        format!("({s})")
    } else {
        s
    }
}

fn render_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn render_args(args: &[Expr]) -> String {
    args.iter().map(render_expr).collect::<Vec<_>>().join(", ")
}

pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::NodeCall {
            namespace,
            name,
            args,
            ..
        } => format!("{}.{}({})", namespace.as_str(), name, render_args(args)),
        Expr::Call { name, args, .. } => format!("{}({})", name, render_args(args)),
        Expr::Identifier(i) => i.clone(),
        Expr::StringLit(s) => render_str(s),
        Expr::NumberLit(n) => n.clone(),
        Expr::BoolLit(b) => b.to_string(),
        Expr::Compare { op, lhs, rhs } => {
            format!("{} {} {}", wrap(lhs, 5), op.symbol(), wrap(rhs, 5))
        }
        Expr::Not(inner) => format!("not {}", wrap(inner, 3)),
        Expr::And(l, r) => format!("{} and {}", wrap(l, 2), wrap(r, 3)),
        Expr::Or(l, r) => format!("{} or {}", wrap(l, 1), wrap(r, 2)),
        Expr::BracketList(items) => format!("[{}]", render_args(items)),
        Expr::Ellipsis => "...".into(),
    }
}

/// Renders a procedure with two-space indentation.
pub fn render_procedure(ast: &ProcedureAst) -> String {
    let mut out = String::new();
    render_block(&ast.statements, 0, &mut out);
    out
}

fn push_line(out: &mut String, depth: usize, text: &str) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
    out.push_str(text);
    out.push('\n');
}

fn render_block(block: &[Stmt], depth: usize, out: &mut String) {
    for s in block {
        match s {
            Stmt::Assign {
                targets,
                bracketed,
                value,
            } => {
                let t = targets.join(", ");
                let lhs = if *bracketed { format!("[{t}]") } else { t };
                push_line(out, depth, &format!("{lhs} = {}", render_expr(value)));
            }
            Stmt::If {
                branches,
                else_block,
            } => {
                for (i, (cond, body)) in branches.iter().enumerate() {
                    let kw = if i == 0 { "if" } else { "elif" };
                    push_line(out, depth, &format!("{kw} {}:", render_expr(cond)));
                    render_block(body, depth + 1, out);
                }
                if let Some(b) = else_block {
                    push_line(out, depth, "else:");
                    render_block(b, depth + 1, out);
                }
            }
            Stmt::While { condition, body } => {
                push_line(out, depth, &format!("while {}:", render_expr(condition)));
                render_block(body, depth + 1, out);
            }
            Stmt::TryExcept {
                try_block,
                except_block,
            } => {
                push_line(out, depth, "try:");
                render_block(try_block, depth + 1, out);
                push_line(out, depth, "except:");
                render_block(except_block, depth + 1, out);
            }
            Stmt::ExprStmt(e) => push_line(out, depth, &render_expr(e)),
            Stmt::Comment(c) if c.is_empty() => push_line(out, depth, "#"),
            Stmt::Comment(c) => push_line(out, depth, &format!("# {c}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(ns: Namespace, name: &str, args: Vec<Expr>) -> Expr {
        Expr::NodeCall {
            namespace: ns,
            name: name.into(),
            args,
            pos: Pos::default(),
        }
    }

    fn id(s: &str) -> Expr {
        Expr::Identifier(s.into())
    }

    #[test]
    fn while_with_not_or() {
        let src = "while not API.check_hospital(hospital) or not API.check_department(hospital, department):\n    hospital, department = ANSWER.request_information('hospital', 'department')\n";
        let ast = parse_procedure(src).unwrap();
        let expected = Stmt::While {
            condition: Expr::Or(
                Box::new(Expr::Not(Box::new(call(
                    Namespace::Api,
                    "check_hospital",
                    vec![id("hospital")],
                )))),
                Box::new(Expr::Not(Box::new(call(
                    Namespace::Api,
                    "check_department",
                    vec![id("hospital"), id("department")],
                )))),
            ),
            body: vec![Stmt::Assign {
                targets: vec!["hospital".into(), "department".into()],
                bracketed: false,
                value: call(
                    Namespace::Answer,
                    "request_information",
                    vec![
                        Expr::StringLit("hospital".into()),
                        Expr::StringLit("department".into()),
                    ],
                ),
            }],
        };
        assert_eq!(ast.statements, vec![expected]);
    }

    #[test]
    fn bracketed_assignment() {
        let ast = parse_procedure("[hospital_exists] = API.check_hospital([hospital_name])").unwrap();
        assert_eq!(
            ast.statements,
            vec![Stmt::Assign {
                targets: vec!["hospital_exists".into()],
                bracketed: true,
                value: call(
                    Namespace::Api,
                    "check_hospital",
                    vec![Expr::BracketList(vec![id("hospital_name")])]
                ),
            }]
        );
    }

    #[test]
    fn comment_line() {
        let ast = parse_procedure("# ... collect necessory information for registration").unwrap();
        assert_eq!(
            ast.statements,
            vec![Stmt::Comment(
                "... collect necessory information for registration".into()
            )]
        );
    }

    #[test]
    fn try_except_and_ellipsis() {
        let src = "try:\n    # collect\n    result = API.register_appointment(hospital, ...)\n    ANSWER.inform_appointment_result(result)\nexcept:\n    # fallback\n    available_list = API.recommend_other_hospitals(department, time)\n";
        let ast = parse_procedure(src).unwrap();
        match &ast.statements[0] {
            Stmt::TryExcept {
                try_block,
                except_block,
            } => {
                assert_eq!(try_block.len(), 3);
                assert_eq!(except_block.len(), 2);
                match &try_block[1] {
                    Stmt::Assign { value: Expr::NodeCall { args, .. }, .. } => {
                        assert_eq!(args[1], Expr::Ellipsis)
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn if_elif_else_chain() {
        let src = "if x == 1:\n  a()\nelif x > 2 and not y:\n  b()\nelse:\n  c()\n";
        let ast = parse_procedure(src).unwrap();
        match &ast.statements[0] {
            Stmt::If {
                branches,
                else_block,
            } => {
                assert_eq!(branches.len(), 2);
                assert!(else_block.is_some());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn natural_language_line_is_error_with_location() {
        let err = parse_procedure("a = f()\nthen ask the user for the time\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].code, codes::SYNTAX);
        assert_eq!(err[0].line, 2);
        assert_eq!(err[0].col, 6);
    }

    #[test]
    fn tab_indentation_rejected() {
        let err = parse_procedure("if a:\n\tb()\n").unwrap_err();
        assert_eq!(err[0].code, codes::INDENTATION);
        assert_eq!(err[0].line, 2);
    }

    #[test]
    fn missing_block_and_unexpected_indent() {
        let err = parse_procedure("if a:\nb()\n").unwrap_err();
        assert_eq!(err[0].code, codes::INDENTATION);
        assert_eq!(err[0].line, 1);

        let err = parse_procedure("a()\n    b()\n").unwrap_err();
        assert_eq!(err[0].message, "unexpected indent");
    }

    #[test]
    fn comment_only_block() {
        let ast = parse_procedure("if a:\n  # nothing to do yet\nb()\n").unwrap();
        match &ast.statements[0] {
            Stmt::If { branches, .. } => {
                assert_eq!(branches[0].1, vec![Stmt::Comment("nothing to do yet".into())])
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(ast.statements.len(), 2);
    }

    #[test]
    fn stray_elif_and_try_without_except() {
        assert!(parse_procedure("elif a:\n  b()\n").is_err());
        assert!(parse_procedure("try:\n  b()\nc()\n").is_err());
    }

    #[test]
    fn render_keeps_precedence() {
        let src = "if (a or b) and not (c == 1):\n  x = [\"q\\\"uote\", 3.5, -2, True]\n";
        let ast = parse_procedure(src).unwrap();
        let text = render_procedure(&ast);
        assert_eq!(
            text,
            "if (a or b) and not c == 1:\n  x = [\"q\\\"uote\", 3.5, -2, true]\n"
        );
        assert_eq!(parse_procedure(&text).unwrap(), ast);
    }

    #[test]
    fn positions_point_at_call_sites() {
        let ast = parse_procedure("a = 1\n  \nif a:\n    API.foo(x)\n").unwrap();
        let calls = ast.node_calls();
        assert_eq!(calls.len(), 1);
        assert_eq!((calls[0].2.line, calls[0].2.col), (4, 5));
    }
}
