//! Numerical checks for the logistic model: finite-difference gradients,
//! sigmoid range, bitwise determinism and mask invariance.

use cvp_core::glm::{
    self, loss_and_gradient, predict_proba, sigmoid, Dataset, FeatureMask, ModelWeights, TrainConfig,
};
use cvp_core::shift::{self, EnvSign, ShiftConfig};

use super::oracle::{SplitMix64, SuiteOutcome};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;

pub struct RandomProblem {
    pub data: Dataset,
    pub mask: FeatureMask,
    pub weights: ModelWeights,
}

pub fn random_problem(rng: &mut SplitMix64) -> RandomProblem {
    let d = 1 + rng.below(5);
    let n = 10 + rng.below(60);
    let scales: Vec<f64> = (0..d).map(|_| 0.2 + 3.0 * rng.unit()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| scales.iter().map(|s| s * (2.0 * rng.unit() - 1.0)).collect())
        .collect();
    let labels: Vec<u8> = (0..n).map(|_| (rng.next_u64() & 1) as u8).collect();
    let names = (0..d).map(|j| format!("f{j}")).collect();
    let data = Dataset::new(names, rows, labels).expect("well-formed");
    let mut included: Vec<bool> = (0..d).map(|_| rng.unit() < 0.7).collect();
    if !included.iter().any(|&b| b) {
        included[rng.below(d)] = true;
    }
    let weights = ModelWeights {
        bias: 2.0 * rng.unit() - 1.0,
        weights: (0..d).map(|_| 3.0 * rng.unit() - 1.5).collect(),
    };
    RandomProblem {
        data,
        mask: FeatureMask::from_included(included),
        weights,
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences on `problems` random datasets. Returns the outcome
/// and the largest relative error seen.
pub fn gradient_check(problems: usize, seed: u64) -> (SuiteOutcome, f64) {
    let mut rng = SplitMix64(seed);
    let mut out = SuiteOutcome::default();
    let mut worst = 0.0_f64;
    for p in 0..problems {
        out.cases += 1;
        let RandomProblem { data, mask, weights } = random_problem(&mut rng);
        let analytic = loss_and_gradient(&weights, &mask, &data).expect("shapes agree");
        let loss_at = |w: &ModelWeights| loss_and_gradient(w, &mask, &data).expect("shapes agree").loss;

        let mut plus = weights.clone();
        let mut minus = weights.clone();
        plus.bias += FD_STEP;
        minus.bias -= FD_STEP;
        let fd_bias = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
        let mut coords = vec![("bias".to_owned(), analytic.grad_bias, fd_bias)];
        for j in 0..data.dim() {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            plus.weights[j] += FD_STEP;
            minus.weights[j] -= FD_STEP;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
            coords.push((format!("w{j}"), analytic.grad_weights[j], fd));
        }
        for (name, a, fd) in coords {
            let err = relative_error(a, fd);
            worst = worst.max(err);
            if err > FD_TOLERANCE {
                out.fail(format!("problem {p}, {name}: analytic {a:e}, numeric {fd:e}, rel {err:e}"));
            }
        }
    }
    (out, worst)
}

/// Sigmoid over [-750, 750]: finite, within [0, 1], monotone, symmetric.
pub fn sigmoid_stability() -> SuiteOutcome {
    let mut out = SuiteOutcome::default();
    let mut prev = 0.0_f64;
    for k in -3000..=3000 {
        out.cases += 1;
        let z = f64::from(k) * 0.25;
        let s = sigmoid(z);
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            out.fail(format!("sigmoid({z}) = {s}"));
        }
        if s < prev {
            out.fail(format!("sigmoid not monotone at {z}"));
        }
        prev = s;
        if (s + sigmoid(-z) - 1.0).abs() > 1e-15 {
            out.fail(format!("sigmoid({z}) + sigmoid({}) != 1", -z));
        }
    }
    // Extreme logits must not poison the loss either.
    let data = Dataset::new(vec!["x".into()], vec![vec![1.0], vec![-1.0]], vec![0, 1]).expect("valid");
    for w in [750.0, -750.0] {
        out.cases += 1;
        let lg = loss_and_gradient(
            &ModelWeights { bias: 0.0, weights: vec![w] },
            &FeatureMask::all(1),
            &data,
        )
        .expect("shapes agree");
        if !lg.loss.is_finite() || !lg.grad_bias.is_finite() || !lg.grad_weights[0].is_finite() {
            out.fail(format!("non-finite loss/gradient at weight {w}: {lg:?}"));
        }
    }
    out
}

fn bits(w: &ModelWeights) -> Vec<u64> {
    std::iter::once(w.bias.to_bits())
        .chain(w.weights.iter().map(|x| x.to_bits()))
        .collect()
}

/// Two independent training runs produce bit-identical weights.
pub fn training_determinism(seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome::default();
    let cfg = TrainConfig::default();
    let config = ShiftConfig::default();
    let train = shift::generate(&config, EnvSign::Positive, config.n_train, "train");
    let masks = [FeatureMask::all(2), FeatureMask::from_included(vec![true, false])];
    for mask in &masks {
        out.cases += 1;
        let a = glm::train(&train.data, mask, &cfg).expect("trains");
        let b = glm::train(&train.data, mask, &cfg).expect("trains");
        if bits(&a) != bits(&b) {
            out.fail(format!("weights differ between runs with mask {mask:?}"));
        }
    }
    let mut rng = SplitMix64(seed);
    for p in 0..10 {
        out.cases += 1;
        let prob = random_problem(&mut rng);
        let a = glm::train(&prob.data, &prob.mask, &cfg).expect("trains");
        let b = glm::train(&prob.data, &prob.mask, &cfg).expect("trains");
        if bits(&a) != bits(&b) {
            out.fail(format!("random problem {p}: weights differ between runs"));
        }
    }
    out.cases += 1;
    let graph = shift::shift_world();
    let r1 = shift::run_experiment(&config, &graph).expect("runs");
    let r2 = shift::run_experiment(&config, &graph).expect("runs");
    if r1 != r2 {
        out.fail("run_experiment differs between runs".into());
    }
    out
}

/// Rewriting a masked column changes neither the trained weights nor any
/// prediction, bit for bit.
pub fn mask_invariance(seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome::default();
    let mut rng = SplitMix64(seed);
    let cfg = TrainConfig::default();

    let config = ShiftConfig::default();
    let train = shift::generate(&config, EnvSign::Positive, 2000, "train").data;
    let test = shift::generate(&config, EnvSign::Negative, 2000, "test").data;
    let mut cases = vec![(train, test, FeatureMask::from_included(vec![true, false]))];
    for _ in 0..10 {
        let prob = random_problem(&mut rng);
        if prob.mask.count() == prob.mask.len() {
            continue;
        }
        let held_out = random_problem_like(&prob.data, &mut rng);
        cases.push((prob.data, held_out, prob.mask));
    }

    for (k, (train, test, mask)) in cases.into_iter().enumerate() {
        let base = glm::train(&train, &mask, &cfg).expect("trains");
        for j in (0..mask.len()).filter(|&j| !mask.includes(j)) {
            out.cases += 1;
            let noise: Vec<f64> = (0..train.len()).map(|_| 1e3 * (rng.unit() - 0.5)).collect();
            let perturbed = train.with_column(j, &noise).expect("same length");
            let again = glm::train(&perturbed, &mask, &cfg).expect("trains");
            if bits(&base) != bits(&again) {
                out.fail(format!("case {k}: masked column {j} changed trained weights"));
            }
            let test_noise: Vec<f64> = (0..test.len()).map(|_| 1e6 * (rng.unit() - 0.5)).collect();
            let test_perturbed = test.with_column(j, &test_noise).expect("same length");
            for (a, b) in test.rows().zip(test_perturbed.rows()) {
                let pa = predict_proba(&base, &mask, a).expect("shapes agree");
                let pb = predict_proba(&base, &mask, b).expect("shapes agree");
                if pa.to_bits() != pb.to_bits() {
                    out.fail(format!("case {k}: masked column {j} changed a prediction"));
                    break;
                }
            }
        }
    }
    out
}

fn random_problem_like(data: &Dataset, rng: &mut SplitMix64) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..data.dim()).map(|_| 4.0 * rng.unit() - 2.0).collect())
        .collect();
    let labels = (0..50).map(|_| (rng.next_u64() & 1) as u8).collect();
    Dataset::new(data.feature_names().to_vec(), rows, labels).expect("well-formed")
}
