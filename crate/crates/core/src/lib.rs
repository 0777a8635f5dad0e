//! Causal workflow engine: DAG model, workflow text/JSON formats, plan
//! filtering, causally anchored logistic models and a distribution-shift lab.

pub mod dsl;
pub mod glm;
pub mod graph;
pub mod plan;
pub mod rng;
pub mod shift;

pub use graph::{
    Blanket, CausalEdge, CausalGraph, Diagnostic, DiagnosticCode, GraphError, GraphSpec,
    ModuleNode, NodeKind, ValidationReport,
};
