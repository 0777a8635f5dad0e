//! Logistic models with causal feature masking.
//!
//! The associative model uses every feature; the causally anchored model
//! masks everything except the target's causal parents. Both share one
//! weight layout: masked features keep a structural zero weight.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CausalGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("feature mask excludes every feature; nothing to train on")]
    AllMasked,
    #[error("loss became non-finite at iteration {iteration}; learning rate too high?")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("feature `{feature}` maps to `{node}`, which is not a graph node")]
    UnmappedFeature { feature: String, node: String },
}

fn check_dim(expected: usize, found: usize) -> Result<(), GlmError> {
    if expected == found {
        Ok(())
    } else {
        Err(GlmError::DimensionMismatch { expected, found })
    }
}

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self, GlmError> {
        let d = feature_names.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(GlmError::InvalidDataset(format!(
                    "row {i} has {} columns, expected {d}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(feature_names, values, labels)
    }

    pub fn from_flat(
        feature_names: Vec<String>,
        values: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self, GlmError> {
        let d = feature_names.len();
        if d == 0 {
            return Err(GlmError::InvalidDataset("no feature columns".into()));
        }
        if labels.is_empty() {
            return Err(GlmError::InvalidDataset("no rows".into()));
        }
        if values.len() != labels.len() * d {
            return Err(GlmError::InvalidDataset(format!(
                "{} values for {} rows of {d} columns",
                values.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|y| *y > 1) {
            return Err(GlmError::InvalidDataset(format!("label at row {i} is not 0 or 1")));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GlmError::InvalidDataset(format!(
                "non-finite value at row {}, column {}",
                k / d,
                k % d
            )));
        }
        Ok(Self {
            feature_names,
            values,
            labels,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim())
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, column: &[f64]) -> Result<Self, GlmError> {
        check_dim(self.len(), column.len())?;
        let mut values = self.values.clone();
        let d = self.dim();
        for (i, v) in column.iter().enumerate() {
            values[i * d + j] = *v;
        }
        Self::from_flat(self.feature_names.clone(), values, self.labels.clone())
    }
}

/// Which feature columns a model may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub included: Vec<bool>,
}

impl FeatureMask {
    pub fn all(d: usize) -> Self {
        Self {
            included: vec![true; d],
        }
    }

    pub fn from_included(included: Vec<bool>) -> Self {
        Self { included }
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    pub fn includes(&self, j: usize) -> bool {
        self.included.get(j).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.included.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(d: usize) -> Self {
        Self {
            bias: 0.0,
            weights: vec![0.0; d],
        }
    }
}

/// Weights with their feature names and mask, as exported in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDocument {
    pub bias: f64,
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
    pub mask: Vec<bool>,
}

impl WeightsDocument {
    pub fn new(weights: &ModelWeights, feature_names: &[String], mask: &FeatureMask) -> Self {
        Self {
            bias: weights.bias,
            weights: weights.weights.clone(),
            feature_names: feature_names.to_vec(),
            mask: mask.included.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Initialization {
    #[default]
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient max-norm drops below this.
    pub gradient_tolerance: f64,
    pub initialization: Initialization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            initialization: Initialization::Zeros,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GlmError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(GlmError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(GlmError::InvalidConfig("max_iterations must be positive".into()));
        }
        if self.gradient_tolerance.is_nan() || self.gradient_tolerance < 0.0 {
            return Err(GlmError::InvalidConfig(
                "gradient_tolerance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Logistic function, split on sign so `exp` never overflows.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logit(weights: &ModelWeights, mask: &FeatureMask, row: &[f64]) -> f64 {
    weights
        .weights
        .iter()
        .zip(&mask.included)
        .zip(row)
        .filter(|((_, inc), _)| **inc)
        .fold(weights.bias, |acc, ((w, _), x)| acc + w * x)
}

fn check_shapes(weights: &ModelWeights, mask: &FeatureMask, d: usize) -> Result<(), GlmError> {
    check_dim(d, weights.weights.len())?;
    check_dim(d, mask.len())
}

/// `σ(bias + Σ_{j included} w_j x_j)`; masked columns never contribute.
pub fn predict_proba(weights: &ModelWeights, mask: &FeatureMask, row: &[f64]) -> Result<f64, GlmError> {
    check_shapes(weights, mask, row.len())?;
    Ok(sigmoid(logit(weights, mask, row)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_bias: f64,
    pub grad_weights: Vec<f64>,
}

impl LossGradient {
    pub fn max_norm(&self) -> f64 {
        self.grad_weights
            .iter()
            .fold(self.grad_bias.abs(), |m, g| m.max(g.abs()))
    }
}

/// Mean binary cross-entropy and its gradient. Masked coordinates of the
/// gradient are exactly zero.
pub fn loss_and_gradient(
    weights: &ModelWeights,
    mask: &FeatureMask,
    data: &Dataset,
) -> Result<LossGradient, GlmError> {
    let d = data.dim();
    check_shapes(weights, mask, d)?;
    let mut loss = 0.0;
    let mut grad_bias = 0.0;
    let mut grad_weights = vec![0.0; d];
    for (row, &y) in data.rows().zip(data.labels()) {
        let z = logit(weights, mask, row);
        let y = f64::from(y);
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
        loss += softplus(z) - y * z;
        let residual = sigmoid(z) - y;
        grad_bias += residual;
        for j in 0..d {
            if mask.included[j] {
                grad_weights[j] += residual * row[j];
            }
        }
    }
    let n = data.len() as f64;
    grad_weights.iter_mut().for_each(|g| *g /= n);
    Ok(LossGradient {
        loss: loss / n,
        grad_bias: grad_bias / n,
        grad_weights,
    })
}

/// Full-batch gradient descent from zero weights.
pub fn train(data: &Dataset, mask: &FeatureMask, config: &TrainConfig) -> Result<ModelWeights, GlmError> {
    train_traced(data, mask, config, |_, _| {})
}

/// [`train`], calling `observe(iteration, loss)` before every update.
pub fn train_traced<F>(
    data: &Dataset,
    mask: &FeatureMask,
    config: &TrainConfig,
    mut observe: F,
) -> Result<ModelWeights, GlmError>
where
    F: FnMut(usize, f64),
{
    config.validate()?;
    check_dim(data.dim(), mask.len())?;
    if mask.count() == 0 {
        return Err(GlmError::AllMasked);
    }
    let mut weights = match config.initialization {
        Initialization::Zeros => ModelWeights::zeros(data.dim()),
    };
    for iteration in 0..config.max_iterations {
        let step = loss_and_gradient(&weights, mask, data)?;
        if !step.loss.is_finite() {
            return Err(GlmError::NonFiniteLoss { iteration });
        }
        observe(iteration, step.loss);
        if step.max_norm() < config.gradient_tolerance {
            break;
        }
        weights.bias -= config.learning_rate * step.grad_bias;
        for (w, g) in weights.weights.iter_mut().zip(&step.grad_weights) {
            *w -= config.learning_rate * g;
        }
        if !weights.bias.is_finite() || weights.weights.iter().any(|w| !w.is_finite()) {
            return Err(GlmError::NonFiniteLoss {
                iteration: iteration + 1,
            });
        }
    }
    Ok(weights)
}

/// Fraction of rows where `predict_proba >= 0.5` matches the label.
pub fn evaluate_accuracy(
    weights: &ModelWeights,
    mask: &FeatureMask,
    data: &Dataset,
) -> Result<f64, GlmError> {
    check_shapes(weights, mask, data.dim())?;
    let correct = data
        .rows()
        .zip(data.labels())
        .filter(|(row, &y)| u8::from(sigmoid(logit(weights, mask, row)) >= 0.5) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Mask keeping exactly the features bound to causal parents of `target`.
/// `bindings` pairs each feature name, in column order, with its graph node.
pub fn causal_mask(
    graph: &CausalGraph,
    target: &str,
    bindings: &[(&str, &str)],
) -> Result<FeatureMask, GlmError> {
    let parents = graph
        .parents(target)
        .map_err(|_| GlmError::UnknownModule(target.to_owned()))?;
    let included = bindings
        .iter()
        .map(|(feature, node)| {
            if graph.contains(node) {
                Ok(parents.contains(node))
            } else {
                Err(GlmError::UnmappedFeature {
                    feature: (*feature).to_owned(),
                    node: (*node).to_owned(),
                })
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(FeatureMask { included })
}
