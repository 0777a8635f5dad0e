//! Grid search for the spurious-cue parameters (α, σ_s).
//!
//! Scans α ∈ {0.5, 0.75, ..., 2.0} (outer) and σ_s ∈ {0.4, 0.5, ..., 1.2}
//! (inner) at seed 42 and prints every cell, marking the first pair whose
//! four accuracies all lie within 3 points of the reference table
//! (Associative 93.8 / 70.0, Causal-Anchored 94.4 / 94.4).
//!
//! ```bash
//! cargo run --release -p cvp-core --example calibrate
//! ```

use cvp_core::shift::{shift_world, AccuracyTargets, ModelKind, ShiftConfig};

fn main() {
    let targets = AccuracyTargets {
        associative_train: 0.938,
        associative_test: 0.700,
        anchored_train: 0.944,
        anchored_test: 0.944,
    };
    let alphas: Vec<f64> = (0..7).map(|i| 0.5 + 0.25 * i as f64).collect();
    let sds: Vec<f64> = (0..9).map(|i| 0.4 + 0.1 * i as f64).collect();
    let graph = shift_world();
    let mut first = None;
    for &alpha in &alphas {
        for &sd in &sds {
            let config = ShiftConfig {
                spurious_strength: alpha,
                spurious_noise_sd: sd,
                ..ShiftConfig::default()
            };
            let report = cvp_core::shift::run_experiment(&config, &graph).expect("experiment runs");
            let a = report.model(ModelKind::Associative);
            let c = report.model(ModelKind::CausalAnchored);
            let dev = targets.max_deviation_points(&report);
            let hit = dev <= 3.0;
            if hit && first.is_none() {
                first = Some((alpha, sd));
            }
            println!(
                "alpha={alpha:.2} sigma_s={sd:.2}  assoc {:5.1}/{:5.1}  anchored {:5.1}/{:5.1}  max_dev {dev:5.2}{}",
                100.0 * a.train_accuracy,
                100.0 * a.test_accuracy,
                100.0 * c.train_accuracy,
                100.0 * c.test_accuracy,
                if hit { "  *" } else { "" }
            );
        }
    }
    match first {
        Some((alpha, sd)) => println!("first pair within tolerance: alpha={alpha:.2} sigma_s={sd:.2}"),
        None => println!("no pair within tolerance"),
    }
}
