//! Causal DAG over workflow modules.
//!
//! A [`CausalGraph`] is an immutable value: every edit returns a new graph, and
//! every graph produced through [`CausalGraph::add_node`] / [`CausalGraph::add_edge`]
//! is acyclic with full referential integrity. Untrusted input (files, HTTP
//! bodies) arrives as a [`GraphSpec`] and is checked with [`GraphSpec::validate`]
//! before it can become a graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Role tag of a module. Purely descriptive; no algorithm looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Tool,
    Llm,
    Data,
    #[default]
    Generic,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [NodeKind::Tool, NodeKind::Llm, NodeKind::Data, NodeKind::Generic];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Tool => "tool",
            NodeKind::Llm => "llm",
            NodeKind::Data => "data",
            NodeKind::Generic => "generic",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown node kind `{s}`"))
    }
}

/// Returns true if `s` matches `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One operable module of a workflow.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModuleNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

impl ModuleNode {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Generic,
            label: String::new(),
        }
    }

    pub fn with_kind(mut self, kind: NodeKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Directed edge `from -> to`: `from` is a direct causal parent of `to`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CausalEdge {
    pub from: String,
    pub to: String,
}

impl CausalEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for CausalEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Closed set of structural diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagnosticCode {
    CycleDetected,
    UnknownNodeRef,
    SelfLoop,
    DuplicateEdge,
    DuplicateNode,
    BadIdentifier,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::CycleDetected => "CycleDetected",
            DiagnosticCode::UnknownNodeRef => "UnknownNodeRef",
            DiagnosticCode::SelfLoop => "SelfLoop",
            DiagnosticCode::DuplicateEdge => "DuplicateEdge",
            DiagnosticCode::DuplicateNode => "DuplicateNode",
            DiagnosticCode::BadIdentifier => "BadIdentifier",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("node `{0}` is already declared")]
    DuplicateNode(String),
    #[error("`{0}` is not a valid identifier (expected [A-Za-z_][A-Za-z0-9_]*)")]
    BadIdentifier(String),
    #[error("unknown node `{0}`")]
    UnknownNodeRef(String),
    #[error("self loop on `{0}`")]
    SelfLoop(String),
    #[error("edge {from}->{to} is already declared")]
    DuplicateEdge { from: String, to: String },
    #[error("edge would create cycle {}", .path.join(" -> "))]
    WouldCreateCycle { path: Vec<String> },
    #[error("cycle detected: {}", .cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
}

impl GraphError {
    /// Diagnostic code this error reports under. A rejected cycle-closing
    /// edge reports as [`DiagnosticCode::CycleDetected`].
    pub fn code(&self) -> DiagnosticCode {
        match self {
            GraphError::DuplicateNode(_) => DiagnosticCode::DuplicateNode,
            GraphError::BadIdentifier(_) => DiagnosticCode::BadIdentifier,
            GraphError::UnknownNodeRef(_) => DiagnosticCode::UnknownNodeRef,
            GraphError::SelfLoop(_) => DiagnosticCode::SelfLoop,
            GraphError::DuplicateEdge { .. } => DiagnosticCode::DuplicateEdge,
            GraphError::WouldCreateCycle { .. } | GraphError::CycleDetected { .. } => {
                DiagnosticCode::CycleDetected
            }
        }
    }

    /// Node or edge references involved in the error.
    pub fn involved(&self) -> Vec<String> {
        match self {
            GraphError::DuplicateNode(id)
            | GraphError::BadIdentifier(id)
            | GraphError::UnknownNodeRef(id)
            | GraphError::SelfLoop(id) => vec![id.clone()],
            GraphError::DuplicateEdge { from, to } => vec![format!("{from}->{to}")],
            GraphError::WouldCreateCycle { path } => path.clone(),
            GraphError::CycleDetected { cycle } => cycle.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub message: String,
    pub involved: Vec<String>,
}

impl From<&GraphError> for Diagnostic {
    fn from(err: &GraphError) -> Self {
        Diagnostic {
            code: err.code(),
            message: err.to_string(),
            involved: err.involved(),
        }
    }
}

/// Result of [`GraphSpec::validate`]. `ok` holds iff `diagnostics` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        Self {
            ok: diagnostics.is_empty(),
            diagnostics,
        }
    }

    pub fn has(&self, code: DiagnosticCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }
}

/// Unchecked graph description, as read from an untrusted source.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphSpec {
    pub name: String,
    pub nodes: Vec<ModuleNode>,
    pub edges: Vec<CausalEdge>,
}

impl GraphSpec {
    /// Lists every structural violation. Never fails.
    pub fn validate(&self) -> ValidationReport {
        let mut diagnostics = Vec::new();
        let mut seen_nodes = HashSet::new();
        for node in &self.nodes {
            if !is_identifier(&node.id) {
                diagnostics.push(Diagnostic::from(&GraphError::BadIdentifier(node.id.clone())));
            }
            if !seen_nodes.insert(node.id.as_str()) {
                diagnostics.push(Diagnostic::from(&GraphError::DuplicateNode(node.id.clone())));
            }
        }

        let mut seen_edges = HashSet::new();
        let mut clean_edges = Vec::new();
        for edge in &self.edges {
            let mut clean = true;
            if edge.from == edge.to {
                diagnostics.push(Diagnostic::from(&GraphError::SelfLoop(edge.from.clone())));
                clean = false;
            }
            for end in [&edge.from, &edge.to] {
                if !seen_nodes.contains(end.as_str()) {
                    let mut d = Diagnostic::from(&GraphError::UnknownNodeRef(end.clone()));
                    d.involved.push(edge.to_string());
                    diagnostics.push(d);
                    clean = false;
                }
                if edge.from == edge.to {
                    break;
                }
            }
            if !seen_edges.insert((edge.from.as_str(), edge.to.as_str())) {
                diagnostics.push(Diagnostic::from(&GraphError::DuplicateEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                }));
                clean = false;
            }
            if clean {
                clean_edges.push(edge.clone());
            }
        }

        // Report one cycle at a time, dropping its closing edge, until none remain.
        let order: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        let mut remaining: BTreeSet<CausalEdge> = clean_edges.into_iter().collect();
        while let Some(cycle) = find_cycle(&order, &remaining) {
            let closing = CausalEdge::new(cycle[cycle.len() - 2].clone(), cycle[cycle.len() - 1].clone());
            remaining.remove(&closing);
            diagnostics.push(Diagnostic::from(&GraphError::CycleDetected { cycle }));
        }

        ValidationReport::from_diagnostics(diagnostics)
    }

    /// Kahn ordering of an unchecked graph, failing with the offending cycle.
    pub fn topological_order(&self) -> Result<Vec<String>, GraphError> {
        let order: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        let edges: BTreeSet<CausalEdge> = self.edges.iter().cloned().collect();
        match kahn(&order, &edges) {
            Ok(sorted) => Ok(sorted.into_iter().map(str::to_owned).collect()),
            Err(()) => Err(GraphError::CycleDetected {
                cycle: find_cycle(&order, &edges).unwrap_or_default(),
            }),
        }
    }

    /// Builds a graph, or returns the full validation report on failure.
    pub fn into_graph(self) -> Result<CausalGraph, ValidationReport> {
        let report = self.validate();
        if !report.ok {
            return Err(report);
        }
        let nodes = self.nodes.into_iter().map(|n| (n.id.clone(), n)).collect();
        Ok(CausalGraph {
            name: self.name,
            nodes,
            edges: self.edges.into_iter().collect(),
        })
    }
}

/// Named causal DAG. Node iteration follows insertion order; edges iterate
/// sorted by `(from, to)`.
#[derive(Debug, Clone, Default)]
pub struct CausalGraph {
    name: String,
    nodes: IndexMap<String, ModuleNode>,
    edges: BTreeSet<CausalEdge>,
}

impl PartialEq for CausalGraph {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.nodes.len() == other.nodes.len()
            && self.nodes.values().eq(other.nodes.values())
            && self.edges == other.edges
    }
}

impl Eq for CausalGraph {}

/// Parents, children and spouses of one node, plus their union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Blanket<'g> {
    pub parents: BTreeSet<&'g str>,
    pub children: BTreeSet<&'g str>,
    pub spouses: BTreeSet<&'g str>,
    pub blanket: BTreeSet<&'g str>,
}

impl CausalGraph {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &ModuleNode> + '_ {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = &CausalEdge> + '_ {
        self.edges.iter()
    }

    pub fn node(&self, id: &str) -> Option<&ModuleNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.contains(&CausalEdge::new(from, to))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            name: self.name.clone(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.iter().cloned().collect(),
        }
    }

    pub fn add_node(&self, node: ModuleNode) -> Result<Self, GraphError> {
        if !is_identifier(&node.id) {
            return Err(GraphError::BadIdentifier(node.id));
        }
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        let mut next = self.clone();
        next.nodes.insert(node.id.clone(), node);
        Ok(next)
    }

    /// Adds `from -> to`. Rejects edges that would close a cycle, reporting the
    /// cycle as `[from, to, ..., from]`.
    pub fn add_edge(&self, from: &str, to: &str) -> Result<Self, GraphError> {
        for end in [from, to] {
            if !self.contains(end) {
                return Err(GraphError::UnknownNodeRef(end.to_owned()));
            }
        }
        if from == to {
            return Err(GraphError::SelfLoop(from.to_owned()));
        }
        let edge = CausalEdge::new(from, to);
        if self.edges.contains(&edge) {
            return Err(GraphError::DuplicateEdge {
                from: edge.from,
                to: edge.to,
            });
        }
        if let Some(back) = self.shortest_path(to, from) {
            let mut path = Vec::with_capacity(back.len() + 1);
            path.push(from.to_owned());
            path.extend(back.into_iter().map(str::to_owned));
            return Err(GraphError::WouldCreateCycle { path });
        }
        let mut next = self.clone();
        next.edges.insert(edge);
        Ok(next)
    }

    /// Structural check. Always `ok` for graphs built through this API; kept
    /// so callers can treat every graph source uniformly.
    pub fn validate(&self) -> ValidationReport {
        self.to_spec().validate()
    }

    /// Kahn's algorithm; among ready nodes the lexicographically smallest id
    /// goes first.
    pub fn topological_order(&self) -> Vec<&str> {
        let order: Vec<&str> = self.nodes.keys().map(String::as_str).collect();
        kahn(&order, &self.edges).expect("CausalGraph is acyclic by construction")
    }

    fn require(&self, n: &str) -> Result<(), GraphError> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(GraphError::UnknownNodeRef(n.to_owned()))
        }
    }

    fn children_of<'a>(&'a self, n: &str) -> Vec<&'a str> {
        self.edges
            .range(CausalEdge::new(n, "")..)
            .take_while(|e| e.from == n)
            .map(|e| e.to.as_str())
            .collect()
    }

    fn parents_of<'a>(&'a self, n: &str) -> Vec<&'a str> {
        self.edges
            .iter()
            .filter(|e| e.to == n)
            .map(|e| e.from.as_str())
            .collect()
    }

    pub fn parents(&self, n: &str) -> Result<BTreeSet<&str>, GraphError> {
        self.require(n)?;
        Ok(self.parents_of(n).into_iter().collect())
    }

    pub fn children(&self, n: &str) -> Result<BTreeSet<&str>, GraphError> {
        self.require(n)?;
        Ok(self.children_of(n).into_iter().collect())
    }

    pub fn ancestors(&self, n: &str) -> Result<BTreeSet<&str>, GraphError> {
        self.require(n)?;
        let mut parents: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            parents.entry(e.to.as_str()).or_default().push(e.from.as_str());
        }
        Ok(reach(n, |v: &str| parents.get(v).cloned().unwrap_or_default()))
    }

    pub fn descendants(&self, n: &str) -> Result<BTreeSet<&str>, GraphError> {
        self.require(n)?;
        Ok(reach(n, |v: &str| self.children_of(v)))
    }

    /// Other parents of `n`'s children.
    pub fn spouses(&self, n: &str) -> Result<BTreeSet<&str>, GraphError> {
        Ok(self.blanket(n)?.spouses)
    }

    pub fn markov_blanket(&self, n: &str) -> Result<BTreeSet<&str>, GraphError> {
        Ok(self.blanket(n)?.blanket)
    }

    /// Markov blanket of `n` broken down by relation.
    pub fn blanket<'g>(&'g self, n: &str) -> Result<Blanket<'g>, GraphError> {
        self.require(n)?;
        let parents: BTreeSet<&str> = self.parents_of(n).into_iter().collect();
        let children: BTreeSet<&str> = self.children_of(n).into_iter().collect();
        let spouses: BTreeSet<&str> = self
            .edges
            .iter()
            .filter(|e| children.contains(e.to.as_str()) && e.from != n)
            .map(|e| e.from.as_str())
            .collect();
        let blanket = parents
            .iter()
            .chain(&children)
            .chain(&spouses)
            .copied()
            .filter(|v| *v != n)
            .collect();
        Ok(Blanket {
            parents,
            children,
            spouses,
            blanket,
        })
    }

    /// Graph surgery for `do(n)`: drops every edge into `n`.
    pub fn intervene(&self, n: &str) -> Result<Self, GraphError> {
        self.require(n)?;
        let mut next = self.clone();
        next.edges.retain(|e| e.to != n);
        Ok(next)
    }

    /// Shortest directed path `src ~> dst` (inclusive), exploring children in
    /// sorted order so the result is deterministic.
    fn shortest_path<'a>(&'a self, src: &'a str, dst: &str) -> Option<Vec<&'a str>> {
        let mut prev: HashMap<&str, &str> = HashMap::new();
        let mut queue = VecDeque::from([src]);
        let mut seen = HashSet::from([src]);
        while let Some(v) = queue.pop_front() {
            if v == dst {
                let mut path = vec![v];
                let mut cur = v;
                while let Some(&p) = prev.get(cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for c in self.children_of(v) {
                if seen.insert(c) {
                    prev.insert(c, v);
                    queue.push_back(c);
                }
            }
        }
        None
    }
}

fn reach<'a, F>(start: &str, mut next: F) -> BTreeSet<&'a str>
where
    F: FnMut(&str) -> Vec<&'a str>,
{
    let mut out = BTreeSet::new();
    let mut stack = next(start);
    while let Some(v) = stack.pop() {
        if v != start && out.insert(v) {
            stack.extend(next(v));
        }
    }
    out
}

/// Kahn with lexicographic tie-break. Edges whose endpoints are not in
/// `order` are ignored. `Err` means a cycle blocked completion.
fn kahn<'a>(order: &[&'a str], edges: &'a BTreeSet<CausalEdge>) -> Result<Vec<&'a str>, ()> {
    let known: HashSet<&str> = order.iter().copied().collect();
    let mut indegree: BTreeMap<&str, usize> = order.iter().map(|v| (*v, 0)).collect();
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in edges {
        if known.contains(e.from.as_str()) && known.contains(e.to.as_str()) {
            *indegree.get_mut(e.to.as_str()).unwrap() += 1;
            children.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
    }
    let mut ready: BinaryHeap<Reverse<&str>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(v, _)| Reverse(*v))
        .collect();
    let mut sorted = Vec::with_capacity(indegree.len());
    while let Some(Reverse(v)) = ready.pop() {
        sorted.push(v);
        for c in children.get(v).into_iter().flatten() {
            let d = indegree.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if sorted.len() == indegree.len() {
        Ok(sorted)
    } else {
        Err(())
    }
}

/// Finds one directed cycle among `edges` (restricted to known nodes), as
/// `[v0, v1, ..., v0]`. Deterministic: roots in `order`, children sorted.
fn find_cycle(order: &[&str], edges: &BTreeSet<CausalEdge>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let known: HashSet<&str> = order.iter().copied().collect();
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges {
        if known.contains(e.from.as_str()) && known.contains(e.to.as_str()) {
            children.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
    }
    let mut marks: HashMap<&str, Mark> = HashMap::new();
    for &root in order {
        if marks.contains_key(root) {
            continue;
        }
        // Iterative DFS; `path` mirrors the open nodes on the stack.
        let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
        let mut path: Vec<&str> = vec![root];
        marks.insert(root, Mark::Open);
        while let Some((v, i)) = stack.last_mut() {
            let kids = children.get(*v).map(Vec::as_slice).unwrap_or(&[]);
            if let Some(&c) = kids.get(*i) {
                *i += 1;
                match marks.get(c) {
                    Some(Mark::Open) => {
                        let start = path.iter().position(|p| *p == c).unwrap();
                        let mut cycle: Vec<String> =
                            path[start..].iter().map(|s| (*s).to_owned()).collect();
                        cycle.push(c.to_owned());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(c, Mark::Open);
                        stack.push((c, 0));
                        path.push(c);
                    }
                }
            } else {
                marks.insert(*v, Mark::Done);
                stack.pop();
                path.pop();
            }
        }
    }
    None
}
