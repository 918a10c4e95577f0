//! Average treatment effect of syntax-guided masking on similarity
//! outcomes, adjusted for code confounders via inverse propensity weighting.
//!
//! The causal graph is fixed: confounders Z drive both the treatment T and
//! the outcome Y, and T drives Y. Propensities come from a logistic model of
//! T on standardized Z.

mod estimate;
pub mod logistic;

pub use estimate::{
    bootstrap_all_metrics, bootstrap_ate, design_matrix, estimate_ate_ipw, fit_propensity,
    placebo_refute, AteEstimate, BootstrapSummary, PropensityModel, PROPENSITY_TRIM,
};

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ast::ConfounderVector;
use crate::error::{Error, Result};
use crate::metrics::{Metric, SimilarityScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub snippet_id: String,
    pub node_type: String,
    /// 1 for syntax-guided masking, 0 for the matched random masking.
    pub treatment: u8,
    pub outcomes: SimilarityScores,
    pub confounders: ConfounderVector,
}

impl EvaluationRecord {
    pub fn is_treated(&self) -> bool {
        self.treatment == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultFlag {
    Underpowered,
    Refuted,
    NotConverged,
}

impl ResultFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ResultFlag::Underpowered => "underpowered",
            ResultFlag::Refuted => "refuted",
            ResultFlag::NotConverged => "not_converged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub mean: f64,
    pub std: f64,
}

impl ArmStats {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> ArmStats {
        let n = values.len();
        if n == 0 {
            return ArmStats {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        ArmStats { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalResult {
    pub node_type: String,
    pub outcome_metric: Metric,
    pub tau: f64,
    pub tau_naive: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub tau_bootstrap_mean: f64,
    pub tau_bootstrap_std: f64,
    pub placebo_tau: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub treated: ArmStats,
    pub control: ArmStats,
    pub flags: Vec<ResultFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub min_group_size: usize,
    /// Refit the propensity model inside each bootstrap resample.
    pub refit_in_bootstrap: bool,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            bootstrap_resamples: 500,
            seed: 0,
            min_group_size: 30,
            refit_in_bootstrap: true,
        }
    }
}

/// Placebo threshold: the fake-treatment effect must stay within
/// `max(0.02, 0.1 |tau|)`.
pub fn placebo_passes(tau: f64, placebo_tau: f64) -> bool {
    placebo_tau.abs() <= 0.02f64.max(0.1 * tau.abs())
}

/// Seed for one node type's analysis, independent of which other node
/// types are present.
pub fn node_type_seed(seed: u64, node_type: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(node_type.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn analyze_group(
    node_type: &str,
    records: &[EvaluationRecord],
    config: &CausalConfig,
) -> Result<Vec<CausalResult>> {
    let seed = node_type_seed(config.seed, node_type);
    let model = fit_propensity(records)?;
    if !model.converged {
        warn!(
            "{node_type}: propensity fit did not converge after {} iterations",
            model.iterations
        );
    }
    let boot = bootstrap_all_metrics(
        records,
        &model,
        config.refit_in_bootstrap,
        config.bootstrap_resamples,
        seed,
    )?;
    let rows = estimate::canonical(records);
    let n_treated = rows.iter().filter(|r| r.is_treated()).count();
    let n_control = records.len() - n_treated;

    Metric::ALL
        .iter()
        .zip(boot)
        .map(|(&metric, boot)| {
            let estimate = estimate_ate_ipw(records, &model, metric)?;
            let placebo_tau = placebo_refute(records, metric, seed ^ 0x9e37_79b9_7f4a_7c15)?;
            let values = |treated: bool| -> Vec<f64> {
                rows.iter()
                    .filter(|r| r.is_treated() == treated)
                    .map(|r| r.outcomes.get(metric))
                    .collect()
            };
            let mut flags = Vec::new();
            if n_treated < config.min_group_size || n_control < config.min_group_size {
                flags.push(ResultFlag::Underpowered);
            }
            if !placebo_passes(estimate.tau, placebo_tau) {
                flags.push(ResultFlag::Refuted);
            }
            if !model.converged {
                flags.push(ResultFlag::NotConverged);
            }
            Ok(CausalResult {
                node_type: node_type.to_owned(),
                outcome_metric: metric,
                tau: estimate.tau,
                tau_naive: estimate.tau_naive,
                ci_low: boot.ci_low,
                ci_high: boot.ci_high,
                tau_bootstrap_mean: boot.tau_mean,
                tau_bootstrap_std: boot.tau_std,
                placebo_tau,
                n_treated,
                n_control,
                treated: ArmStats::of(&values(true)),
                control: ArmStats::of(&values(false)),
                flags,
            })
        })
        .collect()
}

/// One result per (node type, metric), sorted by node type then metric.
/// Node types lacking one of the two arms are left out with a notice.
pub fn run_causal_analysis(
    records: &[EvaluationRecord],
    config: &CausalConfig,
) -> Result<Vec<CausalResult>> {
    if records.is_empty() {
        return Err(Error::Estimation("no evaluation records".into()));
    }
    let mut groups: BTreeMap<&str, Vec<EvaluationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.node_type.as_str())
            .or_default()
            .push(r.clone());
    }
    let usable: Vec<(&str, Vec<EvaluationRecord>)> = groups
        .into_iter()
        .filter(|(node_type, group)| {
            let treated = group.iter().filter(|r| r.is_treated()).count();
            let ok = treated > 0 && treated < group.len();
            if !ok {
                info!("{node_type}: only one treatment arm present, omitted from analysis");
            }
            ok
        })
        .collect();

    let per_group: Vec<Vec<CausalResult>> = usable
        .par_iter()
        .map(|(node_type, group)| analyze_group(node_type, group, config))
        .collect::<Result<_>>()?;
    Ok(per_group.into_iter().flatten().collect())
}
