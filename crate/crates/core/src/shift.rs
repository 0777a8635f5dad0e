//! Synthetic distribution-shift experiment.
//!
//! World: `C -> Y`, with `S` causally disconnected from `Y`. Per row:
//!
//! 1. `x_c ~ N(0, 1)`
//! 2. `y_raw = [x_c > 0]`
//! 3. `y = y_raw`, flipped with probability `flip_prob`
//! 4. `x_s = env_sign * α * (2y - 1) + N(0, σ_s)`
//!
//! The training environment ties `x_s` positively to the observed label and
//! the test environment negatively, so a model leaning on `x_s` degrades
//! under the shift while a model masked to `C` does not.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::glm::{
    self, causal_mask, evaluate_accuracy, Dataset, FeatureMask, GlmError, TrainConfig,
    WeightsDocument,
};
use crate::graph::{CausalGraph, ModuleNode, NodeKind};
use crate::rng::KeyedRng;

pub const CAUSAL_FEATURE: &str = "x_c";
pub const SPURIOUS_FEATURE: &str = "x_s";
pub const CAUSAL_NODE: &str = "C";
pub const SPURIOUS_NODE: &str = "S";
pub const TARGET_NODE: &str = "Y";

/// Feature columns in order, each bound to its graph node.
pub const FEATURE_BINDINGS: [(&str, &str); 2] =
    [(CAUSAL_FEATURE, CAUSAL_NODE), (SPURIOUS_FEATURE, SPURIOUS_NODE)];

/// Calibrated spurious-cue strength α (see `examples/calibrate.rs`).
pub const DEFAULT_SPURIOUS_STRENGTH: f64 = 0.5;
/// Calibrated spurious-cue noise σ_s (see `examples/calibrate.rs`).
pub const DEFAULT_SPURIOUS_NOISE_SD: f64 = 0.7;

const SUBSTREAM_CAUSAL: u64 = 0;
const SUBSTREAM_FLIP: u64 = 1;
const SUBSTREAM_SPURIOUS: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShiftError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Train(#[from] GlmError),
}

/// Direction of the spurious correlation in one environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum EnvSign {
    Positive,
    Negative,
}

impl EnvSign {
    pub fn value(self) -> f64 {
        match self {
            EnvSign::Positive => 1.0,
            EnvSign::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            EnvSign::Positive => EnvSign::Negative,
            EnvSign::Negative => EnvSign::Positive,
        }
    }
}

impl From<EnvSign> for i8 {
    fn from(sign: EnvSign) -> i8 {
        match sign {
            EnvSign::Positive => 1,
            EnvSign::Negative => -1,
        }
    }
}

impl TryFrom<i8> for EnvSign {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(EnvSign::Positive),
            -1 => Ok(EnvSign::Negative),
            other => Err(format!("environment sign must be 1 or -1, found {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub flip_prob: f64,
    /// α: how strongly `x_s` tracks the label.
    pub spurious_strength: f64,
    /// σ_s: noise on `x_s`.
    pub spurious_noise_sd: f64,
    pub train_env_sign: EnvSign,
    pub test_env_sign: EnvSign,
    pub trainer: TrainConfig,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_train: 5000,
            n_test: 5000,
            flip_prob: 0.05,
            spurious_strength: DEFAULT_SPURIOUS_STRENGTH,
            spurious_noise_sd: DEFAULT_SPURIOUS_NOISE_SD,
            train_env_sign: EnvSign::Positive,
            test_env_sign: EnvSign::Negative,
            trainer: TrainConfig::default(),
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<(), ShiftError> {
        let bad = |msg: &str| Err(ShiftError::InvalidConfig(msg.to_owned()));
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        if !(0.0..=0.5).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 0.5]");
        }
        if !(self.spurious_strength.is_finite() && self.spurious_strength >= 0.0) {
            return bad("spurious_strength must be finite and >= 0");
        }
        if !(self.spurious_noise_sd.is_finite() && self.spurious_noise_sd > 0.0) {
            return bad("spurious_noise_sd must be finite and > 0");
        }
        self.trainer.validate()?;
        Ok(())
    }
}

/// One environment's samples, columns `[x_c, x_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: Dataset,
    pub env_sign: EnvSign,
    /// Labels before noise, kept for auditing the flip rate.
    pub raw_labels: Vec<u8>,
}

impl SyntheticDataset {
    /// `x_c,x_s,y` CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_c,x_s,y\n");
        for (row, y) in self.data.rows().zip(self.data.labels()) {
            out.push_str(&format!("{},{},{}\n", row[0], row[1], y));
        }
        out
    }

    pub fn flip_count(&self) -> usize {
        self.raw_labels
            .iter()
            .zip(self.data.labels())
            .filter(|(a, b)| a != b)
            .count()
    }

    fn digest_into(&self, hasher: &mut Sha256) {
        hasher.update([i8::from(self.env_sign) as u8]);
        hasher.update((self.data.len() as u64).to_le_bytes());
        for (row, y) in self.data.rows().zip(self.data.labels()) {
            for v in row {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update([*y]);
        }
    }
}

/// Deterministically generates `n` rows for one environment. Row `i` depends
/// only on `(config.seed, stream_tag, i)` and the config's shape parameters.
pub fn generate(config: &ShiftConfig, env_sign: EnvSign, n: usize, stream_tag: &str) -> SyntheticDataset {
    let rng = KeyedRng::new(config.seed, stream_tag);
    let rows: Vec<(f64, f64, u8, u8)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let x_c = rng.normal(i, SUBSTREAM_CAUSAL);
            let y_raw = u8::from(x_c > 0.0);
            let flip = rng.uniform(i, SUBSTREAM_FLIP) < config.flip_prob;
            let y = if flip { 1 - y_raw } else { y_raw };
            let x_s = env_sign.value() * config.spurious_strength * (2.0 * f64::from(y) - 1.0)
                + config.spurious_noise_sd * rng.normal(i, SUBSTREAM_SPURIOUS);
            (x_c, x_s, y, y_raw)
        })
        .collect();
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut raw_labels = Vec::with_capacity(n);
    for (x_c, x_s, y, y_raw) in rows {
        values.extend([x_c, x_s]);
        labels.push(y);
        raw_labels.push(y_raw);
    }
    let data = Dataset::from_flat(
        vec![CAUSAL_FEATURE.to_owned(), SPURIOUS_FEATURE.to_owned()],
        values,
        labels,
    )
    .expect("generated values are finite and labels binary");
    SyntheticDataset {
        data,
        env_sign,
        raw_labels,
    }
}

/// The three-variable world: `C -> Y`, `S` isolated.
pub fn shift_world() -> CausalGraph {
    CausalGraph::new("shift-world")
        .add_node(ModuleNode::new(CAUSAL_NODE).with_kind(NodeKind::Data).with_label("Causal variable"))
        .and_then(|g| {
            g.add_node(
                ModuleNode::new(SPURIOUS_NODE)
                    .with_kind(NodeKind::Data)
                    .with_label("Spurious variable"),
            )
        })
        .and_then(|g| g.add_node(ModuleNode::new(TARGET_NODE).with_label("Target")))
        .and_then(|g| g.add_edge(CAUSAL_NODE, TARGET_NODE))
        .expect("static world graph is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Associative,
    CausalAnchored,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Associative => "Associative",
            ModelKind::CausalAnchored => "CausalAnchored",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: ModelKind,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub weights: WeightsDocument,
}

impl ModelResult {
    /// `train - test`, in percentage points.
    pub fn gap_points(&self) -> f64 {
        100.0 * (self.train_accuracy - self.test_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ShiftConfig,
    pub models: Vec<ModelResult>,
    /// SHA-256 over both generated datasets.
    pub generator_digest: String,
}

impl ExperimentReport {
    pub fn model(&self, kind: ModelKind) -> &ModelResult {
        self.models
            .iter()
            .find(|m| m.name == kind)
            .expect("reports carry both models")
    }

    /// `model,env,accuracy` summary; accuracies as fractions with four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,env,accuracy\n");
        for m in &self.models {
            out.push_str(&format!("{},train,{:.4}\n", m.name, m.train_accuracy));
            out.push_str(&format!("{},test,{:.4}\n", m.name, m.test_accuracy));
        }
        out
    }
}

/// Generates both environments, trains the associative and the causally
/// anchored model on the same training set and scores both on both sets.
pub fn run_experiment(config: &ShiftConfig, graph: &CausalGraph) -> Result<ExperimentReport, ShiftError> {
    config.validate()?;
    for node in [CAUSAL_NODE, SPURIOUS_NODE, TARGET_NODE] {
        if !graph.contains(node) {
            return Err(ShiftError::InvalidGraph(format!("graph has no node `{node}`")));
        }
    }
    let anchored_mask = causal_mask(graph, TARGET_NODE, &FEATURE_BINDINGS)?;

    let (train, test) = rayon::join(
        || generate(config, config.train_env_sign, config.n_train, "train"),
        || generate(config, config.test_env_sign, config.n_test, "test"),
    );
    let mut hasher = Sha256::new();
    train.digest_into(&mut hasher);
    test.digest_into(&mut hasher);
    let generator_digest = hex::encode(hasher.finalize());

    let fit = |kind: ModelKind, mask: FeatureMask| -> Result<ModelResult, ShiftError> {
        let weights = glm::train(&train.data, &mask, &config.trainer)?;
        Ok(ModelResult {
            name: kind,
            train_accuracy: evaluate_accuracy(&weights, &mask, &train.data)?,
            test_accuracy: evaluate_accuracy(&weights, &mask, &test.data)?,
            weights: WeightsDocument::new(&weights, train.data.feature_names(), &mask),
        })
    };
    let (associative, anchored) = rayon::join(
        || fit(ModelKind::Associative, FeatureMask::all(FEATURE_BINDINGS.len())),
        || fit(ModelKind::CausalAnchored, anchored_mask),
    );
    Ok(ExperimentReport {
        config: config.clone(),
        models: vec![associative?, anchored?],
        generator_digest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    SpuriousStrength,
    SpuriousNoiseSd,
    FlipProb,
}

impl SweepParameter {
    fn apply(self, config: &mut ShiftConfig, value: f64) {
        match self {
            SweepParameter::SpuriousStrength => config.spurious_strength = value,
            SweepParameter::SpuriousNoiseSd => config.spurious_noise_sd = value,
            SweepParameter::FlipProb => config.flip_prob = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ExperimentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs one experiment per value (in parallel), point `i` using seed
/// `config.seed + i`. Failures are recorded per point; output order matches
/// `values`.
pub fn sweep(
    config: &ShiftConfig,
    graph: &CausalGraph,
    parameter: SweepParameter,
    values: &[f64],
) -> Vec<SweepPoint> {
    values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut point_config = config.clone();
            point_config.seed = config.seed.wrapping_add(i as u64);
            parameter.apply(&mut point_config, value);
            let result = run_experiment(&point_config, graph);
            SweepPoint {
                value,
                seed: point_config.seed,
                error: result.as_ref().err().map(ToString::to_string),
                report: result.ok(),
            }
        })
        .collect()
}

/// Target accuracies (fractions) for the four report cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyTargets {
    pub associative_train: f64,
    pub associative_test: f64,
    pub anchored_train: f64,
    pub anchored_test: f64,
}

impl AccuracyTargets {
    /// Largest absolute deviation of `report` from the targets, in points.
    pub fn max_deviation_points(&self, report: &ExperimentReport) -> f64 {
        let a = report.model(ModelKind::Associative);
        let c = report.model(ModelKind::CausalAnchored);
        [
            a.train_accuracy - self.associative_train,
            a.test_accuracy - self.associative_test,
            c.train_accuracy - self.anchored_train,
            c.test_accuracy - self.anchored_test,
        ]
        .iter()
        .fold(0.0_f64, |m, d| m.max(100.0 * d.abs()))
    }
}

/// Scans `alphas` (outer) × `noise_sds` (inner) in order and returns the first
/// `(α, σ_s, report)` whose report lies within `tolerance_points` of every
/// target.
pub fn calibrate(
    base: &ShiftConfig,
    graph: &CausalGraph,
    alphas: &[f64],
    noise_sds: &[f64],
    targets: &AccuracyTargets,
    tolerance_points: f64,
) -> Option<(f64, f64, ExperimentReport)> {
    for &alpha in alphas {
        for &sd in noise_sds {
            let config = ShiftConfig {
                spurious_strength: alpha,
                spurious_noise_sd: sd,
                ..base.clone()
            };
            let Ok(report) = run_experiment(&config, graph) else {
                continue;
            };
            if targets.max_deviation_points(&report) <= tolerance_points {
                return Some((alpha, sd, report));
            }
        }
    }
    None
}
