//! Bayesian logistic mixed-effects model with a Laplace (Bayesian LASSO) prior on the
//! fixed slopes and compound-symmetric patient-level random intercept and slopes.
//!
//! ```text
//! Y_ij ~ Bernoulli(p_ij)
//! logit(p_ij) = β0 + u_0i + Σ_k (β_k + u_ki) · PF_ijk
//! u_i ~ N(0, D_u),  D_u = σ² [(1 − ρ) I + ρ J]
//! β_k ~ Laplace(λ),  λ ~ Gamma(1, 1) (or fixed)
//! ```

mod covariance;
mod persist;
mod posterior;
mod sampler;

pub use covariance::{build_covariance, rho_lower_bound, CompoundSymmetry};
pub use persist::{read_fit_manifest, write_fit, FitManifest, FIT_SCHEMA};
pub use posterior::{laplace_log_prior, LogPosterior, PosteriorTerms, SMOOTHING_EPSILON};
pub use sampler::{fit_design, fit_model, mcmc_diagnostics, McmcDiagnostics, ModelFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CenteringConstants, CohortError};
use crate::diagnostics::ParameterDiagnostics;
use crate::glm::Design;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite log-likelihood at iteration {iteration} of chain {chain}")]
    NonFinite { chain: usize, iteration: usize },
    #[error("diagnostics need {needed}: {detail}")]
    InsufficientDraws { needed: &'static str, detail: String },
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Glm(#[from] crate::glm::GlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaMode {
    /// λ ~ Gamma(shape, rate), sampled jointly.
    Hyperprior { shape: f64, rate: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaProposal {
    /// Preconditioned Langevin proposal using the smoothed-|β| gradient.
    Langevin,
    /// Preconditioned Gaussian random walk.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub beta_proposal: BetaProposal,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            beta_proposal: BetaProposal::Langevin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub lambda: LambdaMode,
    pub intercept_prior_sd: f64,
    /// Scale of the half-Normal prior on σ.
    pub sigma_prior_scale: f64,
    /// Holds σ fixed; `Some(0.0)` removes the random effects entirely.
    pub fixed_sigma: Option<f64>,
    /// ρ is kept inside (−1/np + margin, 1 − margin).
    pub rho_margin: f64,
    pub sampler: SamplerSettings,
    /// Centering constants for the factors; computed from the data when absent.
    pub centering: Option<CenteringConstants>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            lambda: LambdaMode::Hyperprior {
                shape: 1.0,
                rate: 1.0,
            },
            intercept_prior_sd: 10.0,
            sigma_prior_scale: 1.0,
            fixed_sigma: None,
            rho_margin: 1e-6,
            sampler: SamplerSettings::default(),
            centering: None,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self, slopes: usize) -> Result<(), InferenceError> {
        let s = &self.sampler;
        if s.chains == 0 || s.thin == 0 {
            return Err(InferenceError::Domain("chains and thin must be positive".into()));
        }
        if s.burn_in >= s.iterations {
            return Err(InferenceError::Domain(format!(
                "burn-in {} must be below iterations {}",
                s.burn_in, s.iterations
            )));
        }
        match self.lambda {
            LambdaMode::Fixed { value } if !(value > 0.0) => {
                return Err(InferenceError::Domain(format!("lambda must be > 0, got {value}")))
            }
            LambdaMode::Hyperprior { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return Err(InferenceError::Domain("lambda hyperprior needs shape, rate > 0".into()))
            }
            _ => {}
        }
        if !(self.intercept_prior_sd > 0.0 && self.sigma_prior_scale > 0.0) {
            return Err(InferenceError::Domain("prior scales must be positive".into()));
        }
        if let Some(sig) = self.fixed_sigma {
            if !(sig >= 0.0) {
                return Err(InferenceError::Domain("fixed sigma must be >= 0".into()));
            }
        }
        let lower = rho_lower_bound(slopes + 1);
        if !(self.rho_margin > 0.0 && lower + self.rho_margin < 1.0 - self.rho_margin) {
            return Err(InferenceError::Domain("rho margin leaves an empty support".into()));
        }
        Ok(())
    }

    pub(crate) fn rho_support(&self, dim: usize) -> (f64, f64) {
        (rho_lower_bound(dim) + self.rho_margin, 1.0 - self.rho_margin)
    }
}

/// Design, outcomes and patient grouping for the mixed model.
#[derive(Debug, Clone)]
pub struct MixedData {
    pub design: Design,
    pub outcomes: Vec<bool>,
    /// Dense group index per row.
    pub groups: Vec<usize>,
    pub group_rows: Vec<Vec<usize>>,
    /// Names of the slope columns (design columns 1..).
    pub names: Vec<String>,
    /// Optional group labels (patient ids).
    pub group_labels: Vec<String>,
}

impl MixedData {
    pub fn new(
        design: Design,
        outcomes: Vec<bool>,
        groups: Vec<usize>,
        names: Vec<String>,
    ) -> Result<Self, InferenceError> {
        if design.rows() != outcomes.len() || design.rows() != groups.len() {
            return Err(InferenceError::Data("design, outcomes and groups differ in length".into()));
        }
        if names.len() + 1 != design.cols() {
            return Err(InferenceError::Data("one name per slope column required".into()));
        }
        let n_groups = groups.iter().max().map_or(0, |g| g + 1);
        let mut group_rows = vec![Vec::new(); n_groups];
        for (r, g) in groups.iter().enumerate() {
            group_rows[*g].push(r);
        }
        if group_rows.iter().any(Vec::is_empty) {
            return Err(InferenceError::Data("group indices must be dense".into()));
        }
        let group_labels = (0..n_groups).map(|g| g.to_string()).collect();
        Ok(Self {
            design,
            outcomes,
            groups,
            group_rows,
            names,
            group_labels,
        })
    }

    pub fn slopes(&self) -> usize {
        self.design.cols() - 1
    }
}

/// Posterior draws, one vector of retained draws per chain for every scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// `intercept` then slope names.
    pub coefficient_names: Vec<String>,
    /// `beta[chain][draw][k]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    /// Posterior mean of each patient's random effects (intercept then slopes).
    pub random_effect_means: Vec<Vec<f64>>,
    pub group_labels: Vec<String>,
    pub acceptance: Vec<AcceptanceRates>,
}

impl PosteriorDraws {
    pub fn chains(&self) -> usize {
        self.beta.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    /// Trace of coefficient `k` per chain.
    pub fn coefficient_trace(&self, k: usize) -> Vec<Vec<f64>> {
        self.beta
            .iter()
            .map(|c| c.iter().map(|d| d[k]).collect())
            .collect()
    }

    /// Named scalar traces: coefficients, then σ, ρ, λ.
    pub fn scalar_traces(&self) -> Vec<(String, Vec<Vec<f64>>)> {
        let mut out: Vec<(String, Vec<Vec<f64>>)> = self
            .coefficient_names
            .iter()
            .enumerate()
            .map(|(k, n)| (n.clone(), self.coefficient_trace(k)))
            .collect();
        out.push(("sigma".into(), self.sigma.clone()));
        out.push(("rho".into(), self.rho.clone()));
        out.push(("lambda".into(), self.lambda.clone()));
        out
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let n = self.draws_per_chain();
        let same = |v: &Vec<Vec<f64>>| v.len() == self.chains() && v.iter().all(|c| c.len() == n);
        if !(same(&self.sigma) && same(&self.rho) && same(&self.lambda))
            || self.beta.iter().any(|c| c.len() != n)
        {
            return Err(InferenceError::Data("draw counts differ across parameters".into()));
        }
        let finite = self.beta.iter().flatten().flatten().all(|v| v.is_finite())
            && self.sigma.iter().flatten().all(|v| v.is_finite() && *v >= 0.0)
            && self.rho.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(InferenceError::Data("non-finite or negative draws".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub beta: f64,
    pub random_effects: f64,
    pub sigma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
    pub diagnostics: ParameterDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub parameters: Vec<ParameterSummary>,
    pub warnings: Vec<String>,
    /// False when any coefficient has PSRF > 1.05 or ESS < 400.
    pub converged: bool,
}

pub const PSRF_THRESHOLD: f64 = 1.05;
pub const ESS_THRESHOLD: f64 = 400.0;

impl FitSummary {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Posterior means of intercept and slopes, in design order.
    pub fn coefficient_means(&self, names: &[String]) -> Vec<f64> {
        names
            .iter()
            .map(|n| self.get(n).map_or(f64::NAN, |p| p.mean))
            .collect()
    }
}
