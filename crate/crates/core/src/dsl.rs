//! `.cvp` workflow text format and the canonical JSON document.
//!
//! ```text
//! workflow "demo"
//! node C kind=data label="Causal input"
//! node Y
//! edge C -> Y
//! ```
//!
//! The grammar is line oriented, so a bad line never hides errors on later
//! lines: the parser reports every diagnosable problem in one pass.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{
    is_identifier, CausalGraph, DiagnosticCode, GraphError, GraphSpec, ModuleNode, NodeKind,
};

/// Inputs larger than this are rejected outright.
pub const MAX_SOURCE_BYTES: usize = 4 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl SourceSpan {
    pub fn new(line: u32, column: u32, length: u32) -> Self {
        Self {
            line: line.max(1),
            column: column.max(1),
            length: length.max(1),
        }
    }

    /// Span from the start of `self` to the end of `end` (same line).
    fn to(self, end: SourceSpan) -> SourceSpan {
        SourceSpan::new(self.line, self.column, end.column + end.length - self.column)
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParseErrorCode {
    UnexpectedToken,
    UnknownNodeRef,
    DuplicateNode,
    DuplicateEdge,
    SelfLoop,
    CycleDetected,
    BadIdentifier,
    UnterminatedString,
}

impl ParseErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorCode::UnexpectedToken => "UnexpectedToken",
            ParseErrorCode::UnknownNodeRef => "UnknownNodeRef",
            ParseErrorCode::DuplicateNode => "DuplicateNode",
            ParseErrorCode::DuplicateEdge => "DuplicateEdge",
            ParseErrorCode::SelfLoop => "SelfLoop",
            ParseErrorCode::CycleDetected => "CycleDetected",
            ParseErrorCode::BadIdentifier => "BadIdentifier",
            ParseErrorCode::UnterminatedString => "UnterminatedString",
        }
    }
}

impl From<DiagnosticCode> for ParseErrorCode {
    fn from(code: DiagnosticCode) -> Self {
        match code {
            DiagnosticCode::CycleDetected => ParseErrorCode::CycleDetected,
            DiagnosticCode::UnknownNodeRef => ParseErrorCode::UnknownNodeRef,
            DiagnosticCode::SelfLoop => ParseErrorCode::SelfLoop,
            DiagnosticCode::DuplicateEdge => ParseErrorCode::DuplicateEdge,
            DiagnosticCode::DuplicateNode => ParseErrorCode::DuplicateNode,
            DiagnosticCode::BadIdentifier => ParseErrorCode::BadIdentifier,
        }
    }
}

impl fmt::Display for ParseErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub span: SourceSpan,
    pub code: ParseErrorCode,
    pub message: String,
}

impl ParseError {
    fn new(span: SourceSpan, code: ParseErrorCode, message: impl Into<String>) -> Self {
        Self {
            span,
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.code, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Non-fatal finding, e.g. an unrecognised `kind=` value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub span: SourceSpan,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub graph: CausalGraph,
    pub warnings: Vec<ParseWarning>,
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Arrow,
    Eq,
    Stray(char),
}

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    span: SourceSpan,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits one line into lexemes. String errors abort the line.
fn lex_line(line_no: u32, line: &str) -> Result<Vec<Lexeme>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i as u32 + 1;
        if c == ' ' || c == '\t' || c == '\r' {
            i += 1;
        } else if c == '#' {
            break;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            out.push(Lexeme {
                tok: Tok::Word(chars[start..i].iter().collect()),
                span: SourceSpan::new(line_no, col, (i - start) as u32),
            });
        } else if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(Lexeme {
                tok: Tok::Arrow,
                span: SourceSpan::new(line_no, col, 2),
            });
            i += 2;
        } else if c == '=' {
            out.push(Lexeme {
                tok: Tok::Eq,
                span: SourceSpan::new(line_no, col, 1),
            });
            i += 1;
        } else if c == '"' {
            let start = i;
            i += 1;
            let mut value = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(ParseError::new(
                            SourceSpan::new(line_no, col, (chars.len() - start) as u32),
                            ParseErrorCode::UnterminatedString,
                            "expected closing `\"` before end of line",
                        ))
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc_col = i as u32 + 1;
                        let (ch, used) = unescape(&chars[i + 1..]).ok_or_else(|| {
                            ParseError::new(
                                SourceSpan::new(line_no, esc_col, 2),
                                ParseErrorCode::UnexpectedToken,
                                "expected escape `\\\"`, `\\\\`, `\\n`, `\\r`, `\\t` or `\\u{..}`",
                            )
                        })?;
                        value.push(ch);
                        i += 1 + used;
                    }
                    Some(&ch) => {
                        value.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Lexeme {
                tok: Tok::Str(value),
                span: SourceSpan::new(line_no, col, (i - start) as u32),
            });
        } else {
            out.push(Lexeme {
                tok: Tok::Stray(c),
                span: SourceSpan::new(line_no, col, 1),
            });
            i += 1;
        }
    }
    Ok(out)
}

/// Decodes the escape following a backslash; returns the char and the
/// number of chars consumed after the backslash.
fn unescape(rest: &[char]) -> Option<(char, usize)> {
    match rest.first()? {
        '"' => Some(('"', 1)),
        '\\' => Some(('\\', 1)),
        'n' => Some(('\n', 1)),
        'r' => Some(('\r', 1)),
        't' => Some(('\t', 1)),
        'u' => {
            if rest.get(1) != Some(&'{') {
                return None;
            }
            let close = rest.iter().position(|c| *c == '}')?;
            let hex: String = rest[2..close].iter().collect();
            if hex.is_empty() || hex.len() > 6 {
                return None;
            }
            let ch = char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?;
            Some((ch, close + 1))
        }
        _ => None,
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

// ---------------------------------------------------------------------------
// Parsing

struct NodeDecl {
    node: ModuleNode,
    span: SourceSpan,
}

struct EdgeDecl {
    from: (String, SourceSpan),
    to: (String, SourceSpan),
}

impl EdgeDecl {
    fn span(&self) -> SourceSpan {
        self.from.1.to(self.to.1)
    }
}

enum Stmt {
    Header(String),
    Node(NodeDecl),
    Edge(EdgeDecl),
}

struct LineParser<'a> {
    lexemes: &'a [Lexeme],
    pos: usize,
    line_no: u32,
    line_len: u32,
}

impl<'a> LineParser<'a> {
    fn peek(&self) -> Option<&'a Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn bump(&mut self) -> Option<&'a Lexeme> {
        let lx = self.lexemes.get(self.pos);
        self.pos += 1;
        lx
    }

    fn eol_span(&self) -> SourceSpan {
        SourceSpan::new(self.line_no, self.line_len + 1, 1)
    }

    fn unexpected(&self, lx: Option<&Lexeme>, expected: &str) -> ParseError {
        match lx {
            Some(lx) => ParseError::new(
                lx.span,
                ParseErrorCode::UnexpectedToken,
                format!("expected {expected}, found {}", describe(&lx.tok)),
            ),
            None => ParseError::new(
                self.eol_span(),
                ParseErrorCode::UnexpectedToken,
                format!("expected {expected}, found end of line"),
            ),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, SourceSpan), ParseError> {
        let lx = self.bump();
        match lx {
            Some(Lexeme {
                tok: Tok::Word(w),
                span,
            }) => {
                if is_identifier(w) {
                    Ok((w.clone(), *span))
                } else {
                    Err(ParseError::new(
                        *span,
                        ParseErrorCode::BadIdentifier,
                        format!("expected {what} matching [A-Za-z_][A-Za-z0-9_]*, found `{w}`"),
                    ))
                }
            }
            other => Err(self.unexpected(other, what)),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, ParseError> {
        match self.bump() {
            Some(Lexeme {
                tok: Tok::Str(s), ..
            }) => Ok(s.clone()),
            other => Err(self.unexpected(other, what)),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        match self.bump() {
            Some(lx) if lx.tok == tok => Ok(()),
            other => Err(self.unexpected(other, what)),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Lexeme { tok: Tok::Word(w), .. }) if w == kw)
    }

    fn end(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            None => Ok(()),
            other => Err(self.unexpected(other, "end of line")),
        }
    }

    fn statement(&mut self, warnings: &mut Vec<ParseWarning>) -> Result<Stmt, ParseError> {
        let head = self.peek();
        match head.map(|lx| &lx.tok) {
            Some(Tok::Word(w)) if w == "workflow" => {
                self.bump();
                let name = self.string("workflow name string")?;
                self.end()?;
                Ok(Stmt::Header(name))
            }
            Some(Tok::Word(w)) if w == "node" => {
                self.bump();
                let (id, span) = self.ident("node identifier")?;
                let mut node = ModuleNode::new(id);
                if self.at_keyword("kind") {
                    self.bump();
                    self.expect(Tok::Eq, "`=` after `kind`")?;
                    let (kind, kind_span) = self.ident("node kind (tool, llm, data, generic)")?;
                    node.kind = kind.parse().unwrap_or_else(|_| {
                        warnings.push(ParseWarning {
                            span: kind_span,
                            message: format!("unknown node kind `{kind}`, treated as generic"),
                        });
                        NodeKind::Generic
                    });
                }
                if self.at_keyword("label") {
                    self.bump();
                    self.expect(Tok::Eq, "`=` after `label`")?;
                    node.label = self.string("quoted label string")?;
                }
                self.end()?;
                Ok(Stmt::Node(NodeDecl { node, span }))
            }
            Some(Tok::Word(w)) if w == "edge" => {
                self.bump();
                let from = self.ident("source node identifier")?;
                self.expect(Tok::Arrow, "`->`")?;
                let to = self.ident("target node identifier")?;
                self.end()?;
                Ok(Stmt::Edge(EdgeDecl { from, to }))
            }
            _ => Err(self.unexpected(head, "`workflow`, `node`, `edge` or `#` comment")),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) => format!("`{w}`"),
        Tok::Str(_) => "string".to_owned(),
        Tok::Arrow => "`->`".to_owned(),
        Tok::Eq => "`=`".to_owned(),
        Tok::Stray(c) => format!("`{}`", c.escape_default()),
    }
}

/// Parses `.cvp` source bytes. Invalid UTF-8 yields a single error at the
/// first offending byte.
pub fn parse_bytes(source: &[u8]) -> Result<Parsed, Vec<ParseError>> {
    if source.len() > MAX_SOURCE_BYTES {
        return Err(vec![size_error(source.len())]);
    }
    match std::str::from_utf8(source) {
        Ok(text) => parse_text_with_warnings(text),
        Err(err) => {
            let valid = &source[..err.valid_up_to()];
            let line = valid.iter().filter(|b| **b == b'\n').count() as u32 + 1;
            let line_start = valid.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
            // Prefix is valid UTF-8 by construction.
            let column = std::str::from_utf8(&valid[line_start..])
                .map(|s| s.chars().count())
                .unwrap_or(0) as u32
                + 1;
            Err(vec![ParseError::new(
                SourceSpan::new(line, column, 1),
                ParseErrorCode::UnexpectedToken,
                "expected UTF-8 text, found invalid byte sequence",
            )])
        }
    }
}

fn size_error(len: usize) -> ParseError {
    ParseError::new(
        SourceSpan::new(1, 1, 1),
        ParseErrorCode::UnexpectedToken,
        format!("expected at most {MAX_SOURCE_BYTES} bytes of input, found {len}"),
    )
}

pub fn parse_text(source: &str) -> Result<CausalGraph, Vec<ParseError>> {
    parse_text_with_warnings(source).map(|p| p.graph)
}

pub fn parse_text_with_warnings(source: &str) -> Result<Parsed, Vec<ParseError>> {
    if source.len() > MAX_SOURCE_BYTES {
        return Err(vec![size_error(source.len())]);
    }
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut name = String::new();
    let mut seen_statement = false;
    let mut nodes: Vec<NodeDecl> = Vec::new();
    let mut edges: Vec<EdgeDecl> = Vec::new();

    for (idx, line) in source.split('\n').enumerate() {
        let line_no = u32::try_from(idx + 1).unwrap_or(u32::MAX);
        let lexemes = match lex_line(line_no, line) {
            Ok(lx) => lx,
            Err(e) => {
                errors.push(e);
                seen_statement = true;
                continue;
            }
        };
        if lexemes.is_empty() {
            continue;
        }
        let mut parser = LineParser {
            lexemes: &lexemes,
            pos: 0,
            line_no,
            line_len: line.chars().count() as u32,
        };
        match parser.statement(&mut warnings) {
            Ok(Stmt::Header(n)) => {
                if seen_statement {
                    errors.push(ParseError::new(
                        lexemes[0].span,
                        ParseErrorCode::UnexpectedToken,
                        "expected `node` or `edge`; the `workflow` header must be the first statement",
                    ));
                } else {
                    name = n;
                }
            }
            Ok(Stmt::Node(decl)) => nodes.push(decl),
            Ok(Stmt::Edge(decl)) => edges.push(decl),
            Err(e) => errors.push(e),
        }
        seen_statement = true;
    }

    let mut declared: HashSet<&str> = HashSet::new();
    for decl in &nodes {
        if !declared.insert(decl.node.id.as_str()) {
            errors.push(ParseError::new(
                decl.span,
                ParseErrorCode::DuplicateNode,
                format!("expected a new node identifier, `{}` is already declared", decl.node.id),
            ));
        }
    }
    let mut seen_edges: HashSet<(&str, &str)> = HashSet::new();
    for edge in &edges {
        let (from, to) = (edge.from.0.as_str(), edge.to.0.as_str());
        if from == to {
            errors.push(ParseError::new(
                edge.span(),
                ParseErrorCode::SelfLoop,
                format!("expected an edge between distinct nodes, found `{from} -> {to}`"),
            ));
        }
        for (id, span) in [&edge.from, &edge.to] {
            if !declared.contains(id.as_str()) {
                errors.push(ParseError::new(
                    *span,
                    ParseErrorCode::UnknownNodeRef,
                    format!("expected a declared node, `{id}` has no `node` declaration"),
                ));
            }
            if from == to {
                break;
            }
        }
        if !seen_edges.insert((from, to)) {
            errors.push(ParseError::new(
                edge.span(),
                ParseErrorCode::DuplicateEdge,
                format!("expected each edge once, `{from} -> {to}` is repeated"),
            ));
        }
    }
    if !errors.is_empty() {
        errors.sort_by_key(|e| e.span);
        return Err(errors);
    }

    let mut graph = CausalGraph::new(name);
    for decl in nodes {
        graph = graph
            .add_node(decl.node)
            .expect("node declarations checked above");
    }
    for edge in &edges {
        match graph.add_edge(&edge.from.0, &edge.to.0) {
            Ok(next) => graph = next,
            Err(GraphError::WouldCreateCycle { path }) => errors.push(ParseError::new(
                edge.span(),
                ParseErrorCode::CycleDetected,
                format!("expected an acyclic graph, edge closes cycle {}", path.join(" -> ")),
            )),
            Err(other) => unreachable!("edge declarations checked above: {other}"),
        }
    }
    if errors.is_empty() {
        Ok(Parsed { graph, warnings })
    } else {
        Err(errors)
    }
}

/// Canonical text: header (if named), nodes in insertion order, then edges
/// sorted by `(from, to)`.
pub fn serialize_text(graph: &CausalGraph) -> String {
    let mut out = String::new();
    if !graph.name().is_empty() {
        out.push_str("workflow ");
        out.push_str(&quote(graph.name()));
        out.push('\n');
    }
    for node in graph.nodes() {
        out.push_str("node ");
        out.push_str(&node.id);
        if node.kind != NodeKind::Generic {
            out.push_str(" kind=");
            out.push_str(node.kind.as_str());
        }
        if !node.label.is_empty() {
            out.push_str(" label=");
            out.push_str(&quote(&node.label));
        }
        out.push('\n');
    }
    for edge in graph.edges() {
        out.push_str(&format!("edge {} -> {}\n", edge.from, edge.to));
    }
    out
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: String,
    #[serde(default)]
    pub kind: NodeKind,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDocument {
    pub from: String,
    pub to: String,
}

/// Wire form of a graph. Field order is the canonical key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub name: String,
    pub nodes: Vec<NodeDocument>,
    pub edges: Vec<EdgeDocument>,
}

impl From<&CausalGraph> for GraphDocument {
    fn from(graph: &CausalGraph) -> Self {
        Self {
            name: graph.name().to_owned(),
            nodes: graph
                .nodes()
                .map(|n| NodeDocument {
                    id: n.id.clone(),
                    kind: n.kind,
                    label: n.label.clone(),
                })
                .collect(),
            edges: graph
                .edges()
                .map(|e| EdgeDocument {
                    from: e.from.clone(),
                    to: e.to.clone(),
                })
                .collect(),
        }
    }
}

impl GraphDocument {
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            name: self.name.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| ModuleNode::new(n.id.clone()).with_kind(n.kind).with_label(n.label.clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| crate::graph::CausalEdge::new(e.from.clone(), e.to.clone()))
                .collect(),
        }
    }

    /// Validates and converts; structural problems come back as parse errors
    /// anchored at the start of the document.
    pub fn into_graph(self) -> Result<CausalGraph, Vec<ParseError>> {
        self.to_spec().into_graph().map_err(|report| {
            report
                .diagnostics
                .into_iter()
                .map(|d| ParseError::new(SourceSpan::new(1, 1, 1), d.code.into(), d.message))
                .collect()
        })
    }
}

pub fn parse_json_document(document: &str) -> Result<GraphDocument, Vec<ParseError>> {
    if document.len() > MAX_SOURCE_BYTES {
        return Err(vec![size_error(document.len())]);
    }
    serde_json::from_str(document).map_err(|e| vec![json_error(&e)])
}

pub fn parse_json(document: &str) -> Result<CausalGraph, Vec<ParseError>> {
    parse_json_document(document)?.into_graph()
}

pub(crate) fn json_error(err: &serde_json::Error) -> ParseError {
    let line = u32::try_from(err.line()).unwrap_or(u32::MAX);
    let column = u32::try_from(err.column()).unwrap_or(u32::MAX);
    ParseError::new(
        SourceSpan::new(line, column, 1),
        ParseErrorCode::UnexpectedToken,
        format!("expected a valid graph document: {err}"),
    )
}

/// Compact canonical JSON: keys `name, nodes, edges`, nodes in insertion
/// order, edges sorted by `(from, to)`.
pub fn serialize_json(graph: &CausalGraph) -> String {
    serde_json::to_string(&GraphDocument::from(graph)).expect("graph documents always serialize")
}

/// Parses either format, choosing JSON when the first non-blank byte is `{`.
pub fn parse_any(source: &[u8]) -> Result<Parsed, Vec<ParseError>> {
    let first = source.iter().find(|b| !b.is_ascii_whitespace());
    if first == Some(&b'{') {
        let text = std::str::from_utf8(source).map_err(|_| {
            vec![ParseError::new(
                SourceSpan::new(1, 1, 1),
                ParseErrorCode::UnexpectedToken,
                "expected UTF-8 JSON document",
            )]
        })?;
        parse_json(text).map(|graph| Parsed {
            graph,
            warnings: Vec::new(),
        })
    } else {
        parse_bytes(source)
    }
}
