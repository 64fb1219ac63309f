mod common;

use std::f64::consts::PI;

use marked_ratio::sample::MarkedPointSample;
use marked_ratio::sim::{simulate, GroundTruthModel, OuParams, GRID_STEP};
use proptest::prelude::*;

/// Benchmark model with the covariates frozen at zero.
fn frozen_model() -> GroundTruthModel {
    let still = OuParams::new(0.1, 0.0, 0.0).unwrap();
    GroundTruthModel { ou_x: [still, still], ou_y: [still], ..GroundTruthModel::benchmark() }
}

#[test]
fn time_change_gives_unit_exponentials() {
    let model = frozen_model();
    let sample = simulate(&model, 4_000.0, 11).unwrap();
    // lambda^i(0) for the four types and the integrated periodic baseline.
    let levels = [2.0, 2.0, 2.0, 2.0];
    let compensator = |t: f64| t + (2.0 * PI * t).sin() / (2.0 * PI);
    for (i, level) in levels.iter().enumerate() {
        let times: Vec<f64> = sample.events.iter().filter(|e| e.type_i == i).map(|e| e.time).collect();
        let mut last = 0.0;
        let gaps: Vec<f64> = times
            .iter()
            .map(|&t| {
                let g = level * (compensator(t) - compensator(last));
                last = t;
                g
            })
            .collect();
        let p = common::ks_pvalue(common::ks_statistic(&gaps, common::exp_cdf(1.0)), gaps.len());
        assert!(p > 0.01, "type {i}: KS p = {p}");
    }
}

#[test]
fn frozen_marks_follow_closed_form_probabilities() {
    let sample = simulate(&frozen_model(), 3_000.0, 5).unwrap();
    // p_i^1 at y = 0: 0.75, 0.05, 0.5, 0.4.
    let expected = [0.75, 0.05, 0.5, 0.4];
    for (i, p) in expected.iter().enumerate() {
        let marks: Vec<usize> = sample.events.iter().filter(|e| e.type_i == i).map(|e| e.mark_k).collect();
        let freq = marks.iter().sum::<usize>() as f64 / marks.len() as f64;
        let se = (p * (1.0 - p) / marks.len() as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "type {i}: {freq} vs {p}");
    }
}

#[test]
fn origin_probabilities_match_hand_evaluation() {
    let p = GroundTruthModel::benchmark().joint_probability(&[0.0, 0.0], &[0.0]);
    let hand = [0.0625, 0.1875, 0.2375, 0.0125, 0.125, 0.125, 0.15, 0.1];
    for (a, b) in p.iter().zip(hand) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn covariate_path_has_stationary_moments() {
    let sample = simulate(&GroundTruthModel::benchmark(), 20_000.0, 3).unwrap();
    let grid = sample.covariate_grid.as_ref().unwrap();
    let sds = [0.05f64.sqrt(), 0.1f64.sqrt(), 0.05f64.sqrt()];
    for (j, sd) in sds.iter().enumerate() {
        let col = grid.values.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // Strong autocorrelation: generous tolerances.
        assert!(mean.abs() < 0.1, "axis {j} mean {mean}");
        assert!((var.sqrt() / sd - 1.0).abs() < 0.15, "axis {j} sd {} vs {sd}", var.sqrt());
    }
}

#[test]
fn sample_directory_round_trip_is_exact() {
    let sample = simulate(&GroundTruthModel::benchmark(), 30.0, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sample.write_dir(dir.path()).unwrap();
    let back = MarkedPointSample::read_dir(dir.path()).unwrap();
    assert_eq!(back, sample);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sample_invariants(horizon in 0.5f64..60.0, seed in 0u64..1_000) {
        let sample = simulate(&GroundTruthModel::benchmark(), horizon, seed).unwrap();
        let mut last = 0.0;
        for e in &sample.events {
            prop_assert!(e.time > last && e.time <= horizon);
            last = e.time;
            prop_assert!(e.type_i < 4 && e.mark_k < 2);
            prop_assert!(e.x.iter().chain(&e.y).all(|v| v.is_finite()));
        }
        let grid = sample.covariate_grid.as_ref().unwrap();
        prop_assert_eq!(grid.values.nrows(), (horizon / GRID_STEP + 1e-9).floor() as usize + 1);
        prop_assert_eq!(sample.class_counts().iter().sum::<usize>(), sample.len());
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in 0u64..1_000) {
        let a = simulate(&GroundTruthModel::benchmark(), 5.0, seed).unwrap();
        let b = simulate(&GroundTruthModel::benchmark(), 5.0, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
