//! Rubin pooling of per-imputation fits and calibration-in-the-large of the
//! intercept. [`PooledModel`] is the deployable risk model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{transform_and_center, CenteringConstants, CohortError, CohortTable, FACTOR_COUNT, FACTOR_NAMES};
use crate::inference::{FitManifest, InferenceError};
use crate::stats::expit;

pub const POOLED_SCHEMA: &str = "pooled-model/1";
const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("pooling needs at least {needed} datasets, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid variance {value} for column {column}")]
    Variance { column: usize, value: f64 },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("outcomes are all {0}; calibration offset is unbounded")]
    SingleClass(u8),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Column-wise Rubin's-rules pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct RubinPooled {
    pub mean: Vec<f64>,
    /// Mean within-imputation variance W̄.
    pub within: Vec<f64>,
    /// Between-imputation variance B.
    pub between: Vec<f64>,
    /// T = W̄ + (1 + 1/m) B.
    pub total: Vec<f64>,
}

/// Pools an m×p matrix of estimates and within-imputation variances.
pub fn rubin_pool(estimates: &[Vec<f64>], variances: &[Vec<f64>]) -> Result<RubinPooled, PoolingError> {
    let m = estimates.len();
    if m < 2 {
        return Err(PoolingError::TooFew { needed: 2, got: m });
    }
    if variances.len() != m {
        return Err(PoolingError::Shape(format!("{m} estimate rows but {} variance rows", variances.len())));
    }
    let p = estimates[0].len();
    if estimates.iter().chain(variances).any(|r| r.len() != p) {
        return Err(PoolingError::Shape("ragged rows".into()));
    }
    for row in variances {
        for (column, v) in row.iter().enumerate() {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(PoolingError::Variance { column, value: *v });
            }
        }
    }
    let mf = m as f64;
    let mut out = RubinPooled {
        mean: vec![0.0; p],
        within: vec![0.0; p],
        between: vec![0.0; p],
        total: vec![0.0; p],
    };
    for k in 0..p {
        let mean = estimates.iter().map(|r| r[k]).sum::<f64>() / mf;
        let within = variances.iter().map(|r| r[k]).sum::<f64>() / mf;
        let between = estimates.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (mf - 1.0);
        out.mean[k] = mean;
        out.within[k] = within;
        out.between[k] = between;
        out.total[k] = within + (1.0 + 1.0 / mf) * between;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intercept {
    /// Rubin-pooled β̂₀.
    pub pooled: f64,
    pub variance: f64,
    /// Logit-scale calibration-in-the-large offset c.
    pub calibration_offset: f64,
    /// β̂₀* = β̂₀ + c, the intercept used for prediction.
    pub recalibrated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub variance: f64,
    /// True when the variance was reconstructed from a reported interval.
    #[serde(default)]
    pub variance_approximate: bool,
    pub odds_ratio: f64,
    pub or_lower: f64,
    pub or_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub sigma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    /// `hyperprior`, `fixed` or `unreported`.
    pub mode: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedPerformance {
    pub auc: Option<f64>,
    /// Every reported calibration slope; sources disagree, none is canonical.
    pub calibration_slope: Vec<f64>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `published` or `fits`.
    pub kind: String,
    pub sources: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledModel {
    pub schema: String,
    pub version: String,
    pub intercept: Intercept,
    /// One entry per factor, in design order.
    pub coefficients: Vec<Coefficient>,
    pub centering: CenteringConstants,
    pub lambda: LambdaRecord,
    pub random_effects: Option<RandomEffects>,
    #[serde(default)]
    pub performance: Option<ReportedPerformance>,
    pub provenance: Provenance,
}

const PUBLISHED_JSON: &str = include_str!("../../models/published_smsc.json");

impl PooledModel {
    /// The shipped published model.
    pub fn published() -> Self {
        let m: Self = serde_json::from_str(PUBLISHED_JSON).expect("shipped model parses");
        m.validate().expect("shipped model is valid");
        m
    }

    pub fn validate(&self) -> Result<(), PoolingError> {
        if self.schema != POOLED_SCHEMA {
            return Err(PoolingError::Invalid(format!("unsupported schema `{}`", self.schema)));
        }
        if self.coefficients.len() != FACTOR_COUNT {
            return Err(PoolingError::Invalid(format!(
                "expected {FACTOR_COUNT} coefficients, got {}",
                self.coefficients.len()
            )));
        }
        for (c, name) in self.coefficients.iter().zip(FACTOR_NAMES) {
            if c.name != name {
                return Err(PoolingError::Invalid(format!("coefficient `{}` where `{name}` expected", c.name)));
            }
            if !c.estimate.is_finite() || !c.variance.is_finite() || c.variance < 0.0 {
                return Err(PoolingError::Invalid(format!("coefficient `{name}` not finite")));
            }
        }
        let i = &self.intercept;
        if ![i.pooled, i.variance, i.calibration_offset, i.recalibrated].iter().all(|v| v.is_finite())
            || i.variance < 0.0
        {
            return Err(PoolingError::Invalid("intercept not finite".into()));
        }
        if !self.centering.is_finite() {
            return Err(PoolingError::Invalid("centering constants not finite".into()));
        }
        if let Some(re) = self.random_effects {
            if !(re.sigma >= 0.0 && re.rho.is_finite() && re.rho < 1.0) {
                return Err(PoolingError::Invalid("random-effect parameters out of range".into()));
            }
        }
        Ok(())
    }

    pub fn coefficient_array(&self) -> [f64; FACTOR_COUNT] {
        let mut out = [0.0; FACTOR_COUNT];
        for (o, c) in out.iter_mut().zip(&self.coefficients) {
            *o = c.estimate;
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, PoolingError> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), PoolingError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, PoolingError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Linear predictors of every record under this model.
    pub fn linear_predictors(&self, data: &CohortTable) -> Result<Vec<f64>, PoolingError> {
        let beta = self.coefficient_array();
        data.records()
            .iter()
            .map(|r| {
                let x = transform_and_center(&r.covariates()?, &self.centering)?;
                Ok(self.intercept.recalibrated
                    + x.values().iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect()
    }
}

fn coefficient(name: &str, estimate: f64, variance: f64) -> Coefficient {
    let half = Z_975 * variance.sqrt();
    Coefficient {
        name: name.into(),
        estimate,
        variance,
        variance_approximate: false,
        odds_ratio: estimate.exp(),
        or_lower: (estimate - half).exp(),
        or_upper: (estimate + half).exp(),
    }
}

/// Pools fit manifests (one per imputed dataset) into a model.
///
/// A single manifest passes through with its posterior variances as T.
/// All manifests must share the same centering constants.
pub fn from_fits(manifests: &[FitManifest], version: &str, sources: Vec<String>) -> Result<PooledModel, PoolingError> {
    let first = manifests.first().ok_or(PoolingError::TooFew { needed: 1, got: 0 })?;
    let expected: Vec<String> = std::iter::once("intercept".to_string())
        .chain(FACTOR_NAMES.iter().map(|s| s.to_string()))
        .collect();
    for m in manifests {
        if m.coefficient_names != expected {
            return Err(PoolingError::Shape("fit coefficients differ from the model factors".into()));
        }
        if m.centering != first.centering {
            return Err(PoolingError::Invalid("fits use different centering constants".into()));
        }
    }
    let moments: Vec<Vec<(f64, f64)>> = manifests
        .iter()
        .map(|m| m.coefficient_moments())
        .collect::<Result<_, _>>()?;
    let est: Vec<Vec<f64>> = moments.iter().map(|r| r.iter().map(|v| v.0).collect()).collect();
    let var: Vec<Vec<f64>> = moments.iter().map(|r| r.iter().map(|v| v.1).collect()).collect();
    let (mean, total) = if manifests.len() == 1 {
        (est[0].clone(), var[0].clone())
    } else {
        let pooled = rubin_pool(&est, &var)?;
        (pooled.mean, pooled.total)
    };
    let scalar_mean = |name: &str| -> Option<f64> {
        let v: Vec<f64> = manifests
            .iter()
            .filter_map(|m| m.summary.get(name).map(|p| p.mean))
            .collect();
        (v.len() == manifests.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let random_effects = match first.spec.fixed_sigma {
        Some(s) if s == 0.0 => None,
        _ => Some(RandomEffects {
            sigma: scalar_mean("sigma").unwrap_or(f64::NAN),
            rho: scalar_mean("rho").unwrap_or(f64::NAN),
        }),
    };
    let lambda = match first.spec.lambda {
        crate::inference::LambdaMode::Fixed { value } => LambdaRecord {
            mode: "fixed".into(),
            value: Some(value),
        },
        crate::inference::LambdaMode::Hyperprior { .. } => LambdaRecord {
            mode: "hyperprior".into(),
            value: scalar_mean("lambda"),
        },
    };
    let model = PooledModel {
        schema: POOLED_SCHEMA.into(),
        version: version.into(),
        intercept: Intercept {
            pooled: mean[0],
            variance: total[0],
            calibration_offset: 0.0,
            recalibrated: mean[0],
        },
        coefficients: FACTOR_NAMES
            .iter()
            .enumerate()
            .map(|(k, n)| coefficient(n, mean[k + 1], total[k + 1]))
            .collect(),
        centering: first.centering,
        lambda,
        random_effects,
        performance: None,
        provenance: Provenance {
            kind: "fits".into(),
            sources,
            notes: vec![format!("{} fit(s) pooled", manifests.len())],
        },
    };
    model.validate()?;
    Ok(model)
}

/// Logit offset c with mean(expit(lp + c)) equal to the prevalence of `outcomes`.
pub fn calibration_offset(linear_predictors: &[f64], outcomes: &[bool]) -> Result<f64, PoolingError> {
    if linear_predictors.len() != outcomes.len() || outcomes.is_empty() {
        return Err(PoolingError::Shape("predictors and outcomes must be non-empty and equal length".into()));
    }
    let events = outcomes.iter().filter(|y| **y).count();
    if events == 0 {
        return Err(PoolingError::SingleClass(0));
    }
    if events == outcomes.len() {
        return Err(PoolingError::SingleClass(1));
    }
    let n = outcomes.len() as f64;
    let target = events as f64 / n;
    let f = |c: f64| -> (f64, f64) {
        let (mut s, mut d) = (0.0, 0.0);
        for lp in linear_predictors {
            let p = expit(lp + c);
            s += p;
            d += p * (1.0 - p);
        }
        (s / n - target, d / n)
    };
    // f is strictly increasing in c; bracket, then safeguarded Newton.
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo).0 > 0.0 {
        lo *= 2.0;
        if lo < -1e4 {
            return Err(PoolingError::Invalid("calibration offset diverges".into()));
        }
    }
    while f(hi).0 < 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(PoolingError::Invalid("calibration offset diverges".into()));
        }
    }
    let mut c = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let (v, d) = f(c);
        if v.abs() < 1e-14 {
            break;
        }
        if v > 0.0 {
            hi = c;
        } else {
            lo = c;
        }
        let newton = c - v / d;
        c = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(c)
}

/// Sets β̂₀* = β̂₀ + c so that mean predicted risk over the rows of `tables`
/// (one table, or every imputed copy stacked) equals their prevalence.
/// Slopes are left untouched.
pub fn recalibrate_intercept(model: &PooledModel, tables: &[CohortTable]) -> Result<PooledModel, PoolingError> {
    model.validate()?;
    if tables.iter().all(CohortTable::is_empty) {
        return Err(PoolingError::Shape("calibration data is empty".into()));
    }
    let mut base = model.clone();
    base.intercept.recalibrated = base.intercept.pooled;
    let mut lp = Vec::new();
    let mut outcomes = Vec::new();
    for t in tables {
        lp.extend(base.linear_predictors(t)?);
        outcomes.extend(t.outcomes());
    }
    let c = calibration_offset(&lp, &outcomes)?;
    base.intercept.calibration_offset = c;
    base.intercept.recalibrated = base.intercept.pooled + c;
    Ok(base)
}
