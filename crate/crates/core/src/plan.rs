//! Static plan filtering: does a proposed sequence of module invocations
//! respect the causal graph?

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CausalGraph;

/// One agent action: run `module`, consuming the outputs of `reads`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    #[serde(skip)]
    pub index: usize,
    pub module: String,
    #[serde(default)]
    pub reads: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, from = "PlanDocument")]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDocument {
    steps: Vec<PlanStep>,
}

impl From<PlanDocument> for Plan {
    fn from(doc: PlanDocument) -> Self {
        Plan::from_steps(doc.steps)
    }
}

impl Plan {
    /// Builds a plan from `(module, reads)` pairs; indices follow position.
    pub fn new<M, R, I>(steps: I) -> Self
    where
        I: IntoIterator<Item = (M, R)>,
        M: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        Plan::from_steps(
            steps
                .into_iter()
                .map(|(module, reads)| PlanStep {
                    index: 0,
                    module: module.into(),
                    reads: reads.into_iter().map(Into::into).collect(),
                })
                .collect(),
        )
    }

    fn from_steps(mut steps: Vec<PlanStep>) -> Self {
        for (i, step) in steps.iter_mut().enumerate() {
            step.index = i;
        }
        Plan { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// First `n` steps, for per-action checking.
    pub fn prefix(&self, n: usize) -> Plan {
        Plan::from_steps(self.steps.iter().take(n).cloned().collect())
    }
}

/// Which information a step may consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AnchorPolicy {
    /// Only the module's causal parents.
    #[default]
    #[serde(alias = "parents")]
    ParentsOnly,
    /// Anything in the module's Markov blanket.
    #[serde(alias = "blanket")]
    MarkovBlanket,
}

impl fmt::Display for AnchorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorPolicy::ParentsOnly => "ParentsOnly",
            AnchorPolicy::MarkovBlanket => "MarkovBlanket",
        })
    }
}

impl AnchorPolicy {
    /// Modules `module` may read under this policy.
    pub fn allowed<'g>(self, graph: &'g CausalGraph, module: &str) -> Option<BTreeSet<&'g str>> {
        match self {
            AnchorPolicy::ParentsOnly => graph.parents(module).ok(),
            AnchorPolicy::MarkovBlanket => graph.markov_blanket(module).ok(),
        }
    }
}

/// Declaration order is the sort order within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    UnknownModule,
    SpuriousDependency,
    OrderViolation,
    DuplicateExecution,
    SelfRead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub step_index: usize,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Checks every step and collects every violation, sorted by
/// `(step_index, code, subject)`.
pub fn check_plan(graph: &CausalGraph, plan: &Plan, policy: AnchorPolicy) -> PlanReport {
    let mut violations = Vec::new();
    let mut executed: HashSet<&str> = HashSet::new();
    for (index, step) in plan.steps.iter().enumerate() {
        let module = step.module.as_str();
        let mut push = |code, subject: &str, detail: String| {
            violations.push(Violation {
                code,
                step_index: index,
                subject: subject.to_owned(),
                detail,
            })
        };
        let allowed = policy.allowed(graph, module);
        if allowed.is_none() {
            push(
                ViolationCode::UnknownModule,
                module,
                format!("module `{module}` is not in the graph"),
            );
        }
        if executed.contains(module) {
            push(
                ViolationCode::DuplicateExecution,
                module,
                format!("module `{module}` already ran at an earlier step"),
            );
        }
        for read in &step.reads {
            let read = read.as_str();
            if read == module {
                push(
                    ViolationCode::SelfRead,
                    read,
                    format!("module `{module}` reads its own output"),
                );
                continue;
            }
            if !graph.contains(read) {
                push(
                    ViolationCode::UnknownModule,
                    read,
                    format!("read `{read}` is not in the graph"),
                );
                continue;
            }
            if let Some(allowed) = &allowed {
                if !allowed.contains(read) {
                    push(
                        ViolationCode::SpuriousDependency,
                        read,
                        format!("`{read}` is outside the {policy} set of `{module}`"),
                    );
                }
            }
            if !executed.contains(read) {
                push(
                    ViolationCode::OrderViolation,
                    read,
                    format!("`{read}` has not run before step {index}"),
                );
            }
        }
        executed.insert(module);
    }
    violations.sort_by(|a, b| {
        (a.step_index, a.code, &a.subject).cmp(&(b.step_index, b.code, &b.subject))
    });
    PlanReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("module `{module}` requires parent `{parent}`, which was not requested")]
    MissingParent { module: String, parent: String },
}

impl PlanError {
    pub fn code(&self) -> &'static str {
        match self {
            PlanError::UnknownModule(_) => "UnknownModule",
            PlanError::MissingParent { .. } => "MissingParent",
        }
    }
}

/// Canonical compliant plan for a parent-closed module set: topological
/// order, each step reading exactly its parents.
pub fn suggest_order<I, S>(graph: &CausalGraph, modules: I) -> Result<Plan, PlanError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let requested: BTreeSet<String> = modules.into_iter().map(|m| m.as_ref().to_owned()).collect();
    if let Some(unknown) = requested.iter().find(|m| !graph.contains(m)) {
        return Err(PlanError::UnknownModule(unknown.clone()));
    }
    let mut steps = Vec::new();
    for module in graph.topological_order() {
        if !requested.contains(module) {
            continue;
        }
        let parents = graph.parents(module).expect("module comes from the graph");
        if let Some(missing) = parents.iter().find(|p| !requested.contains(**p)) {
            return Err(PlanError::MissingParent {
                module: module.to_owned(),
                parent: (*missing).to_owned(),
            });
        }
        steps.push((module, parents));
    }
    Ok(Plan::new(steps))
}
