mod common;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use syntaxeval::causal::logistic::{fit_logistic, gradient, penalized_log_likelihood, IrlsOptions};
use syntaxeval::causal::{
    bootstrap_ate, design_matrix, estimate_ate_ipw, fit_propensity, placebo_refute,
    run_causal_analysis, CausalConfig, EvaluationRecord, ResultFlag,
};
use syntaxeval::metrics::Metric;

const J: Metric = Metric::Jaccard;

fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn balanced_design_gives_flat_propensity() {
    // identical confounders everywhere: only the intercept is fit
    let mut records = common::synthetic_unconfounded(400, -0.1, 1);
    let z = records[0].confounders;
    for r in &mut records {
        r.confounders = z;
    }
    let model = fit_propensity(&records).unwrap();
    assert!(model.features.is_empty());
    assert_eq!(model.coefficients.len(), 1);
    let share = records.iter().filter(|r| r.is_treated()).count() as f64 / records.len() as f64;
    assert!((model.predict(&z) - share).abs() < 1e-9);
    let est = estimate_ate_ipw(&records, &model, J).unwrap();
    assert!((est.tau - est.tau_naive).abs() < 1e-6);
}

#[test]
fn paired_design_propensity_is_one_half() {
    let records = common::synthetic_paired(300, -0.1, 2);
    let model = fit_propensity(&records).unwrap();
    for r in &records {
        assert!((model.predict(&r.confounders) - 0.5).abs() < 1e-6);
    }
    let est = estimate_ate_ipw(&records, &model, J).unwrap();
    assert!((est.tau - est.tau_naive).abs() < 1e-6);
}

#[test]
fn separable_design_is_ranked_well() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut records = common::synthetic_unconfounded(1000, 0.0, 3);
    for r in &mut records {
        let x = (r.confounders.cyclo as f64 - 5.0) / 2.5;
        r.treatment = rng.random_bool(1.0 / (1.0 + (-4.0 * x).exp())) as u8;
    }
    let model = fit_propensity(&records).unwrap();
    assert!(model.converged);
    let scores: Vec<f64> = records
        .iter()
        .map(|r| model.predict(&r.confounders))
        .collect();
    let labels: Vec<bool> = records.iter().map(|r| r.is_treated()).collect();
    assert!(auc(&scores, &labels) > 0.9);
}

#[test]
fn zero_variance_feature_is_dropped() {
    let mut records = common::synthetic_unconfounded(300, -0.1, 4);
    for r in &mut records {
        r.confounders.parse_errors = 0;
    }
    let model = fit_propensity(&records).unwrap();
    assert_eq!(model.dropped_features(), ["parse_errors"]);
    assert_eq!(model.coefficients.len(), 7);
}

#[test]
fn recovers_planted_effect() {
    let records = common::synthetic_unconfounded(2000, -0.1, 5);
    let model = fit_propensity(&records).unwrap();
    let est = estimate_ate_ipw(&records, &model, J).unwrap();
    assert!((est.tau + 0.1).abs() <= 0.01, "tau = {}", est.tau);
    let placebo = placebo_refute(&records, J, 99).unwrap();
    assert!(placebo.abs() <= 0.02, "placebo = {placebo}");
}

#[test]
fn placebo_is_centred_on_zero() {
    let records = common::synthetic_unconfounded(1000, -0.1, 6);
    let mean: f64 = (0..100)
        .map(|s| placebo_refute(&records, J, s).unwrap())
        .sum::<f64>()
        / 100.0;
    assert!(mean.abs() <= 0.005, "mean placebo = {mean}");
}

#[test]
fn ipw_removes_confounding() {
    let (records, delta) = common::synthetic_confounded(4000, 7);
    let model = fit_propensity(&records).unwrap();
    let est = estimate_ate_ipw(&records, &model, J).unwrap();
    assert!(
        (est.tau_naive - delta).abs() >= 0.05,
        "naive = {}",
        est.tau_naive
    );
    assert!((est.tau - delta).abs() <= 0.015, "tau = {}", est.tau);
}

#[test]
fn bootstrap_is_seeded() {
    let records = common::synthetic_paired(100, -0.1, 8);
    let a = bootstrap_ate(&records, true, J, 200, 1).unwrap();
    let b = bootstrap_ate(&records, true, J, 200, 1).unwrap();
    assert_eq!(a, b);
    let c = bootstrap_ate(&records, true, J, 200, 2).unwrap();
    assert_ne!(a, c);
    assert!(a.ci_low < -0.1 + 0.03 && a.ci_high > -0.1 - 0.03);
    assert!(a.ci_low <= a.tau_mean && a.tau_mean <= a.ci_high);
}

#[test]
fn bootstrap_covers_the_truth_most_of_the_time() {
    // smaller twin of the acceptance coverage check
    let covered = (0..40)
        .filter(|&trial| {
            let records = common::synthetic_unconfounded(400, -0.1, 1000 + trial);
            let b = bootstrap_ate(&records, false, J, 200, trial).unwrap();
            b.ci_low <= -0.1 && -0.1 <= b.ci_high
        })
        .count();
    assert!(covered >= 34, "covered {covered}/40");
}

#[test]
fn analysis_is_invariant_to_record_order() {
    let mut records = common::synthetic_paired(60, -0.1, 9);
    records.extend(
        common::synthetic_unconfounded(150, -0.05, 10)
            .into_iter()
            .map(|mut r| {
                r.node_type = "string".into();
                r
            }),
    );
    let config = CausalConfig {
        bootstrap_resamples: 100,
        seed: 5,
        ..Default::default()
    };
    let a = run_causal_analysis(&records, &config).unwrap();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let b = run_causal_analysis(&records, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
}

#[test]
fn node_type_results_do_not_depend_on_other_groups() {
    let ident = common::synthetic_paired(60, -0.1, 11);
    let mut both = ident.clone();
    both.extend(
        common::synthetic_paired(40, -0.2, 12)
            .into_iter()
            .map(|mut r| {
                r.node_type = "string".into();
                r
            }),
    );
    let config = CausalConfig {
        bootstrap_resamples: 50,
        ..Default::default()
    };
    let alone = run_causal_analysis(&ident, &config).unwrap();
    let joint = run_causal_analysis(&both, &config).unwrap();
    assert_eq!(alone[..], joint[..3]);
}

#[test]
fn small_groups_are_flagged() {
    let records = common::synthetic_paired(10, -0.1, 13);
    let results = run_causal_analysis(&records, &CausalConfig::default()).unwrap();
    assert!(results
        .iter()
        .all(|r| r.flags.contains(&ResultFlag::Underpowered)));
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let normal = Normal::new(0.0, 0.5).unwrap();
    for _ in 0..20 {
        let (x, y) = common::random_logistic_dataset(&mut rng);
        let beta = DVector::from_fn(x.ncols(), |_, _| normal.sample(&mut rng));
        let ridge = 0.1;
        let g = gradient(&x, &y, &beta, ridge);
        let h = 1e-5;
        let fd = DVector::from_fn(beta.len(), |j, _| {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[j] += h;
            down[j] -= h;
            (penalized_log_likelihood(&x, &y, &up, ridge)
                - penalized_log_likelihood(&x, &y, &down, ridge))
                / (2.0 * h)
        });
        let rel = (&g - &fd).norm() / g.norm().max(1e-12);
        assert!(rel <= 1e-4, "relative error {rel}");
    }
}

#[test]
fn gradient_vanishes_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let options = IrlsOptions::default();
    for _ in 0..20 {
        let (x, y) = common::random_logistic_dataset(&mut rng);
        let fit = fit_logistic(&x, &y, &options);
        assert!(fit.converged);
        assert!(gradient(&x, &y, &fit.beta, options.ridge).amax() <= 1e-6);
    }
}

#[test]
fn propensity_fit_is_stationary() {
    let (records, _) = common::synthetic_confounded(1500, 16);
    let model = fit_propensity(&records).unwrap();
    let mut sorted: Vec<&EvaluationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.snippet_id.cmp(&b.snippet_id));
    let owned: Vec<EvaluationRecord> = sorted.into_iter().cloned().collect();
    let x = design_matrix(&owned, &model);
    let y: Vec<f64> = owned.iter().map(|r| r.treatment as f64).collect();
    let g = gradient(&x, &y, &model.beta(), IrlsOptions::default().ridge);
    assert!(g.amax() <= 1e-6, "gradient {}", g.amax());
}
