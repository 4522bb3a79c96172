//! Fixed-effects logistic regression by damped Newton (IRLS), with optional
//! ridge or smoothed-L1 penalties on the slopes.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::stats::{bernoulli_logit_ll, expit};

#[derive(Debug, Error, PartialEq)]
pub enum GlmError {
    #[error("design has {rows} rows but {outcomes} outcomes")]
    Shape { rows: usize, outcomes: usize },
    #[error("empty design")]
    Empty,
    #[error("information matrix is singular")]
    Singular,
    #[error("non-finite log-likelihood during fitting")]
    NonFinite,
}

/// Row-major design matrix; column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    /// Prepends a column of ones to the given rows.
    pub fn with_intercept<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len()) + 1;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len() + 1, cols, "ragged design rows");
            data.push(1.0);
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| dot(self.row(i), beta))
            .collect()
    }

    /// New design built from a selection of rows (with repetition).
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    None,
    /// Quadratic penalty `ridge/2 · Σ β_k²` on slopes.
    Ridge(f64),
    /// Laplace-prior penalty `λ Σ |β_k|` on slopes, smoothed as `sqrt(β² + ε)`.
    Lasso { lambda: f64, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub penalty: Penalty,
    /// Prior variance of a Normal(0, v) intercept prior; `None` leaves the intercept free.
    pub intercept_prior_variance: Option<f64>,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            penalty: Penalty::None,
            intercept_prior_variance: None,
            max_iter: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    /// Inverse of the penalized observed information, row-major.
    pub covariance: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticFit {
    pub fn std_error(&self, k: usize) -> f64 {
        let p = self.coefficients.len();
        self.covariance[k * p + k].sqrt()
    }
}

fn penalty_terms(opts: &FitOptions, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p];
    if let Some(v) = opts.intercept_prior_variance {
        value += beta[0] * beta[0] / (2.0 * v);
        grad[0] = beta[0] / v;
        hess[0] = 1.0 / v;
    }
    for k in 1..p {
        match opts.penalty {
            Penalty::None => {}
            Penalty::Ridge(r) => {
                value += 0.5 * r * beta[k] * beta[k];
                grad[k] = r * beta[k];
                hess[k] = r;
            }
            Penalty::Lasso { lambda, epsilon } => {
                let s = (beta[k] * beta[k] + epsilon).sqrt();
                value += lambda * s;
                grad[k] = lambda * beta[k] / s;
                hess[k] = lambda * epsilon / (s * s * s);
            }
        }
    }
    (value, grad, hess)
}

fn objective(x: &Design, y: &[bool], beta: &[f64], opts: &FitOptions) -> (f64, f64) {
    let ll: f64 = (0..x.rows())
        .map(|i| bernoulli_logit_ll(y[i], dot(x.row(i), beta)))
        .sum();
    let (pen, _, _) = penalty_terms(opts, beta);
    (ll, ll - pen)
}

/// Maximizes the (penalized) Bernoulli-logit likelihood.
pub fn fit_logistic(x: &Design, y: &[bool], opts: &FitOptions) -> Result<LogisticFit, GlmError> {
    if x.rows() != y.len() {
        return Err(GlmError::Shape {
            rows: x.rows(),
            outcomes: y.len(),
        });
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(GlmError::Empty);
    }
    let p = x.cols();
    let mut beta = vec![0.0; p];
    let (mut ll, mut obj) = objective(x, y, &beta, opts);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::<f64>::zeros(p, p);

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let mut grad = DVector::<f64>::zeros(p);
        info.fill(0.0);
        for i in 0..x.rows() {
            let row = x.row(i);
            let mu = expit(dot(row, &beta));
            let r = f64::from(u8::from(y[i])) - mu;
            let w = mu * (1.0 - mu);
            for a in 0..p {
                grad[a] += row[a] * r;
                let wa = w * row[a];
                for b in a..p {
                    info[(a, b)] += wa * row[b];
                }
            }
        }
        let (_, pg, ph) = penalty_terms(opts, &beta);
        for a in 0..p {
            grad[a] -= pg[a];
            info[(a, a)] += ph[a];
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        let chol = info.clone().cholesky().ok_or(GlmError::Singular)?;
        let step = chol.solve(&grad);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (tll, tobj) = objective(x, y, &trial, opts);
            if tobj.is_finite() && tobj >= obj - 1e-12 * obj.abs().max(1.0) {
                accepted = Some((trial, tll, tobj, scale * step.amax()));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, tll, tobj, change)) => {
                beta = trial;
                ll = tll;
                obj = tobj;
                if change < opts.tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                // No ascent possible: at the optimum up to rounding.
                converged = grad.amax() < 1e-6;
                break;
            }
        }
        if !ll.is_finite() {
            return Err(GlmError::NonFinite);
        }
    }

    // Final information at the solution.
    info.fill(0.0);
    for i in 0..x.rows() {
        let row = x.row(i);
        let mu = expit(dot(row, &beta));
        let w = mu * (1.0 - mu);
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let (_, _, ph) = penalty_terms(opts, &beta);
    for a in 0..p {
        info[(a, a)] += ph[a];
    }
    let covariance = info
        .try_inverse()
        .map(|m| m.transpose().as_slice().to_vec())
        .ok_or(GlmError::Singular)?;
    Ok(LogisticFit {
        coefficients: beta,
        covariance,
        log_likelihood: ll,
        iterations,
        converged,
    })
}

/// Largest absolute slope before treating a fit as separated.
pub const SEPARATION_BOUND: f64 = 25.0;

/// Unpenalized fit with a ridge fallback when the MLE diverges (separation).
/// Returns the fit and whether the fallback was used.
pub fn fit_logistic_stabilized(
    x: &Design,
    y: &[bool],
    fallback_ridge: f64,
) -> Result<(LogisticFit, bool), GlmError> {
    match fit_logistic(x, y, &FitOptions::default()) {
        Ok(fit)
            if fit.converged
                && fit.coefficients.iter().all(|b| b.abs() < SEPARATION_BOUND) =>
        {
            Ok((fit, false))
        }
        _ => {
            let opts = FitOptions {
                penalty: Penalty::Ridge(fallback_ridge),
                intercept_prior_variance: Some(1.0 / fallback_ridge),
                ..Default::default()
            };
            Ok((fit_logistic(x, y, &opts)?, true))
        }
    }
}
