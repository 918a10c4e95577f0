use std::collections::BTreeMap;

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, sigmoid, IrlsOptions};
use super::EvaluationRecord;
use crate::ast::ConfounderVector;
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Propensities are clipped to this range before weighting.
pub const PROPENSITY_TRIM: (f64, f64) = (0.01, 0.99);

/// Features with a standard deviation below this are dropped.
const MIN_FEATURE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Intercept first, then one weight per kept feature.
    pub coefficients: Vec<f64>,
    /// Indices into [`ConfounderVector::NAMES`] of the features kept.
    pub features: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl PropensityModel {
    fn standardized(&self, z: &ConfounderVector) -> Vec<f64> {
        let raw = z.to_array();
        self.features
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&j, (m, s))| (raw[j] - m) / s)
            .collect()
    }

    /// Untrimmed `P(T = 1 | z)`.
    pub fn predict(&self, z: &ConfounderVector) -> f64 {
        let eta = self.coefficients[0]
            + self
                .standardized(z)
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>();
        sigmoid(eta)
    }

    pub fn propensity(&self, z: &ConfounderVector) -> f64 {
        self.predict(z).clamp(PROPENSITY_TRIM.0, PROPENSITY_TRIM.1)
    }

    pub fn dropped_features(&self) -> Vec<&'static str> {
        (0..ConfounderVector::NAMES.len())
            .filter(|j| !self.features.contains(j))
            .map(|j| ConfounderVector::NAMES[j])
            .collect()
    }
}

fn check_arms<'a>(
    records: impl IntoIterator<Item = &'a EvaluationRecord>,
) -> Result<(usize, usize)> {
    let (mut treated, mut control) = (0, 0);
    for r in records {
        if r.is_treated() {
            treated += 1;
        } else {
            control += 1;
        }
    }
    if treated == 0 || control == 0 {
        return Err(Error::Estimation(format!(
            "both arms required (treated {treated}, control {control})"
        )));
    }
    Ok((treated, control))
}

/// Records in a fixed order independent of the input order, so every
/// estimate (including seeded draws) is invariant to shuffling the input.
pub(super) fn canonical(records: &[EvaluationRecord]) -> Vec<&EvaluationRecord> {
    let mut rows: Vec<&EvaluationRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        a.snippet_id
            .cmp(&b.snippet_id)
            .then_with(|| a.node_type.cmp(&b.node_type))
            .then_with(|| a.treatment.cmp(&b.treatment))
            .then_with(|| {
                Metric::ALL
                    .iter()
                    .fold(std::cmp::Ordering::Equal, |acc, &m| {
                        acc.then_with(|| a.outcomes.get(m).total_cmp(&b.outcomes.get(m)))
                    })
            })
            .then_with(|| a.confounders.cmp(&b.confounders))
    });
    rows
}

fn fit_on(rows: &[&EvaluationRecord], treatment: impl Fn(usize) -> bool) -> PropensityModel {
    let n = rows.len();
    let raw: Vec<[f64; 7]> = rows.iter().map(|r| r.confounders.to_array()).collect();

    let mut features = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for j in 0..ConfounderVector::NAMES.len() {
        let mean = raw.iter().map(|z| z[j]).sum::<f64>() / n as f64;
        let var = raw.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std > MIN_FEATURE_STD {
            features.push(j);
            means.push(mean);
            stds.push(std);
        }
    }

    let design = DMatrix::from_fn(n, features.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            (raw[i][features[c - 1]] - means[c - 1]) / stds[c - 1]
        }
    });
    let y: Vec<f64> = (0..n)
        .map(|i| if treatment(i) { 1.0 } else { 0.0 })
        .collect();
    let fit = fit_logistic(&design, &y, &IrlsOptions::default());

    PropensityModel {
        coefficients: fit.beta.iter().copied().collect(),
        features,
        means,
        stds,
        converged: fit.converged,
        iterations: fit.iterations,
    }
}

/// Logistic regression of treatment on the standardized confounders.
/// Zero-variance confounders are dropped.
pub fn fit_propensity(records: &[EvaluationRecord]) -> Result<PropensityModel> {
    check_arms(records)?;
    let rows = canonical(records);
    let model = fit_on(&rows, |i| rows[i].is_treated());
    let dropped = model.dropped_features();
    if !dropped.is_empty() {
        info!("propensity model: dropped zero-variance features {dropped:?}");
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub tau: f64,
    pub tau_naive: f64,
}

/// Stabilized IPW difference of weighted means, plus the naive difference.
fn ipw(outcomes: &[f64], treated: &[bool], propensities: &[f64]) -> AteEstimate {
    let (mut sw1, mut swy1, mut sw0, mut swy0) = (0.0, 0.0, 0.0, 0.0);
    let (mut n1, mut sy1, mut n0, mut sy0) = (0.0, 0.0, 0.0, 0.0);
    for ((&y, &t), &p) in outcomes.iter().zip(treated).zip(propensities) {
        let p = p.clamp(PROPENSITY_TRIM.0, PROPENSITY_TRIM.1);
        if t {
            let w = 1.0 / p;
            sw1 += w;
            swy1 += w * y;
            n1 += 1.0;
            sy1 += y;
        } else {
            let w = 1.0 / (1.0 - p);
            sw0 += w;
            swy0 += w * y;
            n0 += 1.0;
            sy0 += y;
        }
    }
    AteEstimate {
        tau: swy1 / sw1 - swy0 / sw0,
        tau_naive: sy1 / n1 - sy0 / n0,
    }
}

pub fn estimate_ate_ipw(
    records: &[EvaluationRecord],
    model: &PropensityModel,
    metric: Metric,
) -> Result<AteEstimate> {
    check_arms(records)?;
    let rows = canonical(records);
    let outcomes: Vec<f64> = rows.iter().map(|r| r.outcomes.get(metric)).collect();
    let treated: Vec<bool> = rows.iter().map(|r| r.is_treated()).collect();
    let propensities: Vec<f64> = rows
        .iter()
        .map(|r| model.propensity(&r.confounders))
        .collect();
    Ok(ipw(&outcomes, &treated, &propensities))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub tau_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub tau_std: f64,
    pub resamples: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(mut taus: Vec<f64>) -> BootstrapSummary {
    let n = taus.len();
    let mean = taus.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    taus.sort_by(f64::total_cmp);
    BootstrapSummary {
        tau_mean: mean,
        ci_low: quantile(&taus, 0.025),
        ci_high: quantile(&taus, 0.975),
        tau_std: std,
        resamples: n,
    }
}

/// Cluster bootstrap over snippet ids for all three metrics at once: the
/// records of one snippet are always drawn together. Resamples missing an
/// arm are redrawn.
pub fn bootstrap_all_metrics(
    records: &[EvaluationRecord],
    model: &PropensityModel,
    refit: bool,
    n_resamples: usize,
    seed: u64,
) -> Result<[BootstrapSummary; 3]> {
    check_arms(records)?;
    if n_resamples == 0 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least one resample".into(),
        ));
    }

    let records = canonical(records);
    let mut clusters: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        clusters.entry(r.snippet_id.as_str()).or_default().push(i);
    }
    let clusters: Vec<Vec<usize>> = clusters.into_values().collect();
    let fixed_p: Vec<f64> = records
        .iter()
        .map(|r| model.propensity(&r.confounders))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taus: [Vec<f64>; 3] = Default::default();
    let mut redraws = 0usize;
    while taus[0].len() < n_resamples {
        let mut rows = Vec::with_capacity(records.len());
        for _ in 0..clusters.len() {
            rows.extend_from_slice(&clusters[rng.random_range(0..clusters.len())]);
        }
        let treated: Vec<bool> = rows.iter().map(|&i| records[i].is_treated()).collect();
        if treated.iter().all(|&t| t) || treated.iter().all(|&t| !t) {
            redraws += 1;
            if redraws > 100 * n_resamples {
                return Err(Error::Estimation(
                    "bootstrap resamples keep missing an arm".into(),
                ));
            }
            continue;
        }
        let propensities: Vec<f64> = if refit {
            let sub: Vec<&EvaluationRecord> = rows.iter().map(|&i| records[i]).collect();
            let m = fit_on(&sub, |k| treated[k]);
            sub.iter().map(|r| m.propensity(&r.confounders)).collect()
        } else {
            rows.iter().map(|&i| fixed_p[i]).collect()
        };
        for (slot, metric) in taus.iter_mut().zip(Metric::ALL) {
            let y: Vec<f64> = rows
                .iter()
                .map(|&i| records[i].outcomes.get(metric))
                .collect();
            slot.push(ipw(&y, &treated, &propensities).tau);
        }
    }
    let [a, b, c] = taus;
    Ok([summarize(a), summarize(b), summarize(c)])
}

/// Bootstrap distribution of the IPW estimate for one metric. Returns the
/// resample mean, the 95% percentile interval and the resample std.
pub fn bootstrap_ate(
    records: &[EvaluationRecord],
    refit: bool,
    metric: Metric,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    let model = fit_propensity(records)?;
    let all = bootstrap_all_metrics(records, &model, refit, n_resamples, seed)?;
    let idx = Metric::ALL
        .iter()
        .position(|&m| m == metric)
        .expect("metric is listed");
    Ok(all[idx])
}

/// Re-estimates the effect after permuting treatment labels (arm sizes
/// preserved) and refitting the propensity model.
pub fn placebo_refute(records: &[EvaluationRecord], metric: Metric, seed: u64) -> Result<f64> {
    check_arms(records)?;
    let rows = canonical(records);
    let mut labels: Vec<bool> = rows.iter().map(|r| r.is_treated()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let model = fit_on(&rows, |i| labels[i]);
    let outcomes: Vec<f64> = rows.iter().map(|r| r.outcomes.get(metric)).collect();
    let propensities: Vec<f64> = rows
        .iter()
        .map(|r| model.propensity(&r.confounders))
        .collect();
    Ok(ipw(&outcomes, &labels, &propensities).tau)
}

/// Standardized design matrix used by the propensity model, exposed for
/// optimality checks.
pub fn design_matrix(records: &[EvaluationRecord], model: &PropensityModel) -> DMatrix<f64> {
    DMatrix::from_fn(records.len(), model.coefficients.len(), |i, c| {
        if c == 0 {
            1.0
        } else {
            model.standardized(&records[i].confounders)[c - 1]
        }
    })
}

impl PropensityModel {
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }
}
