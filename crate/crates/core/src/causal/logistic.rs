//! Ridge-penalized logistic regression fit by iteratively reweighted least
//! squares (damped Newton on the penalized log-likelihood).
//!
//! The design matrix carries the intercept in column 0; the ridge penalty
//! skips it.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub ridge: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            ridge: 1e-6,
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^eta)` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn penalty_mask(len: usize) -> impl Iterator<Item = f64> {
    (0..len).map(|j| if j == 0 { 0.0 } else { 1.0 })
}

/// Penalized log-likelihood
/// `sum_i [y_i eta_i - log(1 + e^eta_i)] - ridge/2 * |beta_{1..}|^2`.
pub fn penalized_log_likelihood(
    x: &DMatrix<f64>,
    y: &[f64],
    beta: &DVector<f64>,
    ridge: f64,
) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta.iter().zip(y).map(|(&e, &t)| t * e - softplus(e)).sum();
    let penalty: f64 = beta
        .iter()
        .zip(penalty_mask(beta.len()))
        .map(|(b, m)| m * b * b)
        .sum();
    ll - 0.5 * ridge * penalty
}

/// Analytic gradient of [`penalized_log_likelihood`]: `X^T (y - p) - ridge * beta_{1..}`.
pub fn gradient(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(&e, &t)| t - sigmoid(e)));
    let mut g = x.transpose() * resid;
    for (j, m) in penalty_mask(beta.len()).enumerate() {
        g[j] -= ridge * m * beta[j];
    }
    g
}

fn newton_direction(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    grad: &DVector<f64>,
    ridge: f64,
) -> Option<DVector<f64>> {
    let eta = x * beta;
    let weights: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let p = sigmoid(e);
            p * (1.0 - p)
        })
        .collect();
    // X^T W X
    let mut wx = x.clone();
    for (mut row, &w) in wx.row_iter_mut().zip(&weights) {
        row *= w;
    }
    let mut hessian = x.transpose() * wx;
    for (j, m) in penalty_mask(beta.len()).enumerate() {
        hessian[(j, j)] += ridge * m;
    }
    if let Some(chol) = hessian.clone().cholesky() {
        return Some(chol.solve(grad));
    }
    hessian.lu().solve(grad)
}

/// Fits `P(y = 1 | x) = sigmoid(x beta)`. Returns the last iterate with
/// `converged = false` when the step never drops below the tolerance.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], options: &IrlsOptions) -> LogisticFit {
    assert_eq!(x.nrows(), y.len(), "design rows must match responses");
    let mut beta = DVector::zeros(x.ncols());
    let mut objective = penalized_log_likelihood(x, y, &beta, options.ridge);

    for iteration in 1..=options.max_iterations {
        let grad = gradient(x, y, &beta, options.ridge);
        let Some(step) = newton_direction(x, &beta, &grad, options.ridge) else {
            return LogisticFit {
                beta,
                converged: false,
                iterations: iteration,
            };
        };

        // step halving keeps the objective monotone, up to rounding: near
        // the optimum the gain of a Newton step is below what f64 resolves
        let slack = 1e-12 * objective.abs().max(1.0);
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut next = penalized_log_likelihood(x, y, &candidate, options.ridge);
        while next < objective - slack && scale > 1e-10 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            next = penalized_log_likelihood(x, y, &candidate, options.ridge);
        }

        let change = (&step * scale).amax();
        beta = candidate;
        objective = next.max(objective);
        if change < options.tolerance {
            return LogisticFit {
                beta,
                converged: true,
                iterations: iteration,
            };
        }
    }
    LogisticFit {
        beta,
        converged: false,
        iterations: options.max_iterations,
    }
}
