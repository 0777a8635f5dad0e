//! Brute-force reference implementations for the graph and plan checks.
//!
//! Everything here works on index-based adjacency matrices and never calls
//! into the engine's own traversal code.

use std::collections::BTreeSet;

use cvp_core::graph::{CausalGraph, GraphError, ModuleNode};
use cvp_core::plan::{check_plan, AnchorPolicy, Plan, ViolationCode};

/// Outcome of one suite: how many cases ran and what disagreed.
#[derive(Debug, Default)]
pub struct SuiteOutcome {
    pub cases: usize,
    pub mismatches: Vec<String>,
}

impl SuiteOutcome {
    pub fn merge(&mut self, other: SuiteOutcome) {
        self.cases += other.cases;
        self.mismatches.extend(other.mismatches);
    }

    pub fn fail(&mut self, msg: String) {
        if self.mismatches.len() < 50 {
            self.mismatches.push(msg);
        } else if self.mismatches.len() == 50 {
            self.mismatches.push("(further mismatches suppressed)".into());
        }
    }

    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}

/// A small DAG as an adjacency matrix plus node names.
#[derive(Debug, Clone)]
pub struct SmallDag {
    pub names: Vec<String>,
    pub adj: Vec<Vec<bool>>,
}

impl SmallDag {
    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| self.adj[u][v])
            .collect()
    }

    /// Builds the engine graph, nodes in `node_order`, edges in `edge_order`.
    pub fn build_with(&self, node_order: &[usize], edge_order: &[(usize, usize)]) -> CausalGraph {
        let mut g = CausalGraph::new("oracle");
        for &i in node_order {
            g = g.add_node(ModuleNode::new(&self.names[i])).expect("fresh node");
        }
        for &(u, v) in edge_order {
            g = g
                .add_edge(&self.names[u], &self.names[v])
                .unwrap_or_else(|e| panic!("acyclic edge rejected: {e}"));
        }
        g
    }

    pub fn build(&self) -> CausalGraph {
        let order: Vec<usize> = (0..self.n()).collect();
        self.build_with(&order, &self.edges())
    }

    /// `reach[u][v]`: a directed path of length ≥ 1 runs from u to v
    /// (Floyd–Warshall closure).
    pub fn reach(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        let mut r = self.adj.clone();
        for k in 0..n {
            for i in 0..n {
                if r[i][k] {
                    for j in 0..n {
                        if r[k][j] {
                            r[i][j] = true;
                        }
                    }
                }
            }
        }
        r
    }

    pub fn parents(&self, v: usize) -> BTreeSet<usize> {
        (0..self.n()).filter(|&u| self.adj[u][v]).collect()
    }

    pub fn children(&self, v: usize) -> BTreeSet<usize> {
        (0..self.n()).filter(|&w| self.adj[v][w]).collect()
    }

    /// Every w ≠ v sharing a child with v.
    pub fn spouses(&self, v: usize) -> BTreeSet<usize> {
        let n = self.n();
        (0..n)
            .filter(|&w| w != v && (0..n).any(|c| self.adj[v][c] && self.adj[w][c]))
            .collect()
    }

    pub fn blanket(&self, v: usize) -> BTreeSet<usize> {
        let mut b = self.parents(v);
        b.extend(self.children(v));
        b.extend(self.spouses(v));
        b.remove(&v);
        b
    }

    /// Kahn's algorithm, always taking the smallest available name.
    pub fn lexicographic_topo(&self) -> Vec<String> {
        let n = self.n();
        let mut indeg: Vec<usize> = (0..n).map(|v| self.parents(v).len()).collect();
        let mut done = vec![false; n];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let next = (0..n)
                .filter(|&v| !done[v] && indeg[v] == 0)
                .min_by(|&a, &b| self.names[a].cmp(&self.names[b]))
                .expect("a DAG always has a source");
            done[next] = true;
            for w in self.children(next) {
                indeg[w] -= 1;
            }
            out.push(self.names[next].clone());
        }
        out
    }

    fn names_of(&self, set: &BTreeSet<usize>) -> BTreeSet<String> {
        set.iter().map(|&i| self.names[i].clone()).collect()
    }
}

fn owned(set: BTreeSet<&str>) -> BTreeSet<String> {
    set.into_iter().map(str::to_owned).collect()
}

/// Canonical code of `edges` under relabelling: the smallest adjacency
/// bitmask over all node permutations.
fn canonical_code(n: usize, edges: &[(usize, usize)]) -> u64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = u64::MAX;
    loop {
        let code = edges
            .iter()
            .fold(0u64, |acc, &(u, v)| acc | 1 << (perm[u] * n + perm[v]));
        best = best.min(code);
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// One representative of every isomorphism class of DAGs on `n` nodes.
/// Every DAG has a topological labelling, so upper-triangular edge sets
/// cover all classes.
pub fn dags_up_to_isomorphism(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for mask in 0u64..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &p)| p)
            .collect();
        if seen.insert(canonical_code(n, &edges)) {
            out.push(edges);
        }
    }
    out
}

/// Names whose lexicographic order differs from index order, so tie-breaks
/// are actually exercised.
pub const SCRAMBLED_NAMES: [&str; 8] = ["m5", "b", "Zeta", "a_1", "c", "m10", "A", "x9"];

pub fn dag_from_edges(n: usize, edges: &[(usize, usize)]) -> SmallDag {
    let mut adj = vec![vec![false; n]; n];
    for &(u, v) in edges {
        adj[u][v] = true;
    }
    SmallDag {
        names: SCRAMBLED_NAMES[..n].iter().map(|s| s.to_string()).collect(),
        adj,
    }
}

pub fn random_dag(rng: &mut SplitMix64, max_nodes: usize) -> SmallDag {
    let n = 1 + rng.below(max_nodes);
    let density = 0.15 + 0.6 * rng.unit();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.unit() < density {
                adj[order[i]][order[j]] = true;
            }
        }
    }
    let mut pool: BTreeSet<String> = BTreeSet::new();
    while pool.len() < n {
        let len = 1 + rng.below(3);
        let mut s = String::new();
        s.push((b'a' + rng.below(26) as u8) as char);
        for _ in 1..len {
            let alphabet = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
            s.push(alphabet[rng.below(alphabet.len())] as char);
        }
        pool.insert(s);
    }
    let mut names: Vec<String> = pool.into_iter().collect();
    rng.shuffle(&mut names);
    SmallDag { names, adj }
}

/// Compares every graph query on `dag` against the brute-force definitions.
pub fn check_graph_case(dag: &SmallDag, rng: &mut SplitMix64) -> SuiteOutcome {
    let mut out = SuiteOutcome {
        cases: 1,
        ..Default::default()
    };
    let n = dag.n();
    let g = dag.build();
    let reach = dag.reach();
    let tag = |what: &str| format!("{what} on {:?} edges {:?}", dag.names, dag.edges());

    for v in 0..n {
        let name = &dag.names[v];
        let Ok(b) = g.blanket(name) else {
            out.fail(tag(&format!("blanket({name}) errored")));
            continue;
        };
        let checks = [
            ("parents", owned(b.parents), dag.names_of(&dag.parents(v))),
            ("children", owned(b.children), dag.names_of(&dag.children(v))),
            ("spouses", owned(b.spouses), dag.names_of(&dag.spouses(v))),
            ("blanket", owned(b.blanket), dag.names_of(&dag.blanket(v))),
        ];
        for (what, got, want) in checks {
            if got != want {
                out.fail(tag(&format!("{what}({name}): got {got:?}, want {want:?}")));
            }
        }
        let mb = g.markov_blanket(name).map(owned);
        if mb.as_ref().ok() != Some(&dag.names_of(&dag.blanket(v))) {
            out.fail(tag(&format!("markov_blanket({name}) disagrees with blanket")));
        }
        let anc: BTreeSet<usize> = (0..n).filter(|&u| reach[u][v]).collect();
        let desc: BTreeSet<usize> = (0..n).filter(|&w| reach[v][w]).collect();
        if g.ancestors(name).map(owned).ok() != Some(dag.names_of(&anc)) {
            out.fail(tag(&format!("ancestors({name})")));
        }
        if g.descendants(name).map(owned).ok() != Some(dag.names_of(&desc)) {
            out.fail(tag(&format!("descendants({name})")));
        }
        match g.intervene(name) {
            Ok(cut) => {
                let want: BTreeSet<(String, String)> = dag
                    .edges()
                    .into_iter()
                    .filter(|&(_, t)| t != v)
                    .map(|(s, t)| (dag.names[s].clone(), dag.names[t].clone()))
                    .collect();
                let got: BTreeSet<(String, String)> =
                    cut.edges().map(|e| (e.from.clone(), e.to.clone())).collect();
                if got != want || cut.node_count() != n {
                    out.fail(tag(&format!("intervene({name})")));
                }
            }
            Err(e) => out.fail(tag(&format!("intervene({name}) errored: {e}"))),
        }
    }

    // Topological order: a permutation, edges point forward, matches the
    // lexicographic Kahn order, and does not depend on insertion order.
    let topo: Vec<String> = g.topological_order().into_iter().map(str::to_owned).collect();
    let position = |name: &str| topo.iter().position(|t| t == name);
    let mut sorted_topo = topo.clone();
    sorted_topo.sort();
    let mut sorted_names = dag.names.clone();
    sorted_names.sort();
    if sorted_topo != sorted_names {
        out.fail(tag(&format!("topological_order is not a permutation: {topo:?}")));
    }
    for (u, v) in dag.edges() {
        if position(&dag.names[u]) >= position(&dag.names[v]) {
            out.fail(tag(&format!("edge {}->{} points backwards in {topo:?}", dag.names[u], dag.names[v])));
        }
    }
    if topo != dag.lexicographic_topo() {
        out.fail(tag(&format!("topological_order {topo:?} != {:?}", dag.lexicographic_topo())));
    }
    let mut node_order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut node_order);
    let mut edge_order = dag.edges();
    rng.shuffle(&mut edge_order);
    let rebuilt = dag.build_with(&node_order, &edge_order);
    if rebuilt.topological_order() != g.topological_order() {
        out.fail(tag("topological_order depends on insertion order"));
    }
    if g.topological_order() != topo.iter().map(String::as_str).collect::<Vec<_>>() {
        out.fail(tag("topological_order not repeatable"));
    }

    // add_edge: cycle rejection iff the reverse path exists.
    for u in 0..n {
        for v in 0..n {
            let (su, sv) = (&dag.names[u], &dag.names[v]);
            let result = g.add_edge(su, sv);
            match (u == v, dag.adj[u][v], reach[v][u], &result) {
                (true, _, _, Err(GraphError::SelfLoop(_))) => {}
                (false, true, _, Err(GraphError::DuplicateEdge { .. })) => {}
                (false, false, true, Err(GraphError::WouldCreateCycle { path })) => {
                    let valid = path.len() >= 3
                        && path.first() == Some(su)
                        && path.get(1) == Some(sv)
                        && path.last() == Some(su)
                        && path.windows(2).skip(1).all(|w| {
                            let a = dag.names.iter().position(|x| *x == w[0]);
                            let b = dag.names.iter().position(|x| *x == w[1]);
                            matches!((a, b), (Some(a), Some(b)) if dag.adj[a][b])
                        });
                    if !valid {
                        out.fail(tag(&format!("bad cycle path for {su}->{sv}: {path:?}")));
                    }
                }
                (false, false, false, Ok(next)) => {
                    if !next.has_edge(su, sv) || next.edge_count() != g.edge_count() + 1 {
                        out.fail(tag(&format!("add_edge({su},{sv}) result malformed")));
                    }
                }
                (_, _, reverse, r) => out.fail(tag(&format!(
                    "add_edge({su},{sv}) gave {:?} (reverse path: {reverse})",
                    r.as_ref().map(|_| "Ok")
                ))),
            }
        }
    }
    if !g.validate().ok {
        out.fail(tag("validate rejects an acyclic graph"));
    }
    out
}

/// All DAGs on ≤ `max_exhaustive` nodes up to isomorphism, then `random`
/// random DAGs with ≤ `max_random_nodes` nodes.
pub fn graph_suite(max_exhaustive: usize, random: usize, max_random_nodes: usize, seed: u64) -> SuiteOutcome {
    let mut rng = SplitMix64(seed);
    let mut total = SuiteOutcome::default();
    for n in 0..=max_exhaustive {
        for edges in dags_up_to_isomorphism(n) {
            total.merge(check_graph_case(&dag_from_edges(n, &edges), &mut rng));
        }
    }
    for _ in 0..random {
        let dag = random_dag(&mut rng, max_random_nodes);
        total.merge(check_graph_case(&dag, &mut rng));
    }
    total
}

/// Reference plan checker: returns sorted `(step, code, subject)` triples.
pub fn oracle_plan_violations(
    dag: &SmallDag,
    steps: &[(String, BTreeSet<String>)],
    policy: AnchorPolicy,
) -> Vec<(usize, ViolationCode, String)> {
    let index_of = |name: &str| dag.names.iter().position(|x| x == name);
    let mut out = Vec::new();
    for (k, (module, reads)) in steps.iter().enumerate() {
        let earlier: BTreeSet<&str> = steps[..k].iter().map(|(m, _)| m.as_str()).collect();
        let m = index_of(module);
        if m.is_none() {
            out.push((k, ViolationCode::UnknownModule, module.clone()));
        }
        if earlier.contains(module.as_str()) {
            out.push((k, ViolationCode::DuplicateExecution, module.clone()));
        }
        let allowed: Option<BTreeSet<usize>> = m.map(|m| match policy {
            AnchorPolicy::ParentsOnly => dag.parents(m),
            AnchorPolicy::MarkovBlanket => dag.blanket(m),
        });
        for read in reads {
            if read == module {
                out.push((k, ViolationCode::SelfRead, read.clone()));
                continue;
            }
            let Some(r) = index_of(read) else {
                out.push((k, ViolationCode::UnknownModule, read.clone()));
                continue;
            };
            if allowed.as_ref().is_some_and(|a| !a.contains(&r)) {
                out.push((k, ViolationCode::SpuriousDependency, read.clone()));
            }
            if !earlier.contains(read.as_str()) {
                out.push((k, ViolationCode::OrderViolation, read.clone()));
            }
        }
    }
    out.sort();
    out
}

pub const UNKNOWN_MODULE: &str = "ghost";

/// Every module sequence of length ≤ `max_steps` over the graph's nodes plus
/// one unknown id, each paired with enough read assignments that every step
/// sees every subset of that alphabet. A step's verdict depends only on its
/// own module and reads and on the modules before it, so this covers every
/// (step, reads) combination that the full cross product would.
fn plan_cases_for(dag: &SmallDag, max_steps: usize, out: &mut SuiteOutcome) {
    let g = dag.build();
    let mut alphabet: Vec<String> = dag.names.clone();
    alphabet.push(UNKNOWN_MODULE.into());
    let a = alphabet.len();
    let subsets = 1usize << a;
    let subset = |bits: usize| -> BTreeSet<String> {
        (0..a).filter(|i| bits >> i & 1 == 1).map(|i| alphabet[i].clone()).collect()
    };
    let mut sequences: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_steps {
        frontier = frontier
            .iter()
            .flat_map(|s| {
                (0..a).map(move |m| {
                    let mut t = s.clone();
                    t.push(m);
                    t
                })
            })
            .collect();
        sequences.extend(frontier.iter().cloned());
    }
    for seq in &sequences {
        let assignments = if seq.is_empty() { 1 } else { subsets };
        for j in 0..assignments {
            let steps: Vec<(String, BTreeSet<String>)> = seq
                .iter()
                .enumerate()
                .map(|(k, &m)| (alphabet[m].clone(), subset((j + k * 7) % subsets)))
                .collect();
            let plan = Plan::new(steps.iter().map(|(m, r)| (m.clone(), r.clone())));
            let mut spurious = [BTreeSet::new(), BTreeSet::new()];
            for (p, policy) in [AnchorPolicy::ParentsOnly, AnchorPolicy::MarkovBlanket]
                .into_iter()
                .enumerate()
            {
                out.cases += 1;
                let report = check_plan(&g, &plan, policy);
                let got: Vec<(usize, ViolationCode, String)> = report
                    .violations
                    .iter()
                    .map(|v| (v.step_index, v.code, v.subject.clone()))
                    .collect();
                let want = oracle_plan_violations(dag, &steps, policy);
                if got != want || report.ok != want.is_empty() {
                    out.fail(format!(
                        "{policy:?} on {:?} edges {:?}, plan {steps:?}: got {got:?}, want {want:?}",
                        dag.names,
                        dag.edges()
                    ));
                }
                spurious[p] = got
                    .into_iter()
                    .filter(|(_, c, _)| *c == ViolationCode::SpuriousDependency)
                    .collect();
            }
            if !spurious[1].is_subset(&spurious[0]) {
                out.fail(format!(
                    "blanket spurious set not within parents set on {:?} edges {:?}, plan {steps:?}",
                    dag.names,
                    dag.edges()
                ));
            }
        }
    }
}

/// Plan-filter suite over all graphs on ≤ `max_nodes` nodes (up to
/// isomorphism) and all plans of ≤ `max_steps` steps. Graphs are spread
/// over threads.
pub fn plan_suite(max_nodes: usize, max_steps: usize) -> SuiteOutcome {
    let dags: Vec<SmallDag> = (0..=max_nodes)
        .flat_map(|n| {
            dags_up_to_isomorphism(n)
                .into_iter()
                .map(move |e| dag_from_edges(n, &e))
        })
        .collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(dags.len().max(1));
    let results: Vec<SuiteOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let dags = &dags;
                scope.spawn(move || {
                    let mut out = SuiteOutcome::default();
                    for dag in dags.iter().skip(w).step_by(workers) {
                        plan_cases_for(dag, max_steps, &mut out);
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut total = SuiteOutcome::default();
    for r in results {
        total.merge(r);
    }
    total
}
