//! Individual two-year relapse risk from a [`PooledModel`]:
//! `logit(R) = β̂₀* + Σ β̂_k · PF_k` over the transformed, centered factors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{transform_and_center, CohortError, Covariates, FACTOR_NAMES};
use crate::pooling::{PoolingError, PooledModel};
use crate::stats::expit;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Model(#[from] PoolingError),
}

/// Observed envelope of the training cohort; profiles outside are scored with a warning.
pub const AGE_RANGE: (f64, f64) = (18.0, 76.4);
pub const MAX_DISEASE_DURATION: f64 = 41.2;
pub const MAX_EDSS: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceProfile {
    /// Every centered factor at zero, i.e. the model's centering means.
    Reference,
}

/// A profile: either concrete covariates or the literal string `"reference"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileInput {
    Reference(ReferenceProfile),
    Covariates(Covariates),
}

impl From<Covariates> for ProfileInput {
    fn from(c: Covariates) -> Self {
        Self::Covariates(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub factor: String,
    /// Transformed and centered factor value.
    pub value: f64,
    pub coefficient: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub logit: f64,
    pub contributions: Vec<Contribution>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub risk: f64,
    pub linear_predictor: f64,
    pub contributions: Vec<Contribution>,
    pub warnings: Vec<String>,
}

pub fn extrapolation_warnings(c: &Covariates) -> Vec<String> {
    let mut w = Vec::new();
    if c.age < AGE_RANGE.0 || c.age > AGE_RANGE.1 {
        w.push(format!(
            "extrapolation: age {} outside the observed range {}-{}",
            c.age, AGE_RANGE.0, AGE_RANGE.1
        ));
    }
    if c.disease_duration > MAX_DISEASE_DURATION {
        w.push(format!(
            "extrapolation: disease_duration {} above the observed maximum {MAX_DISEASE_DURATION}",
            c.disease_duration
        ));
    }
    if c.edss > MAX_EDSS {
        w.push(format!("extrapolation: edss {} above the observed maximum {MAX_EDSS}", c.edss));
    }
    w
}

pub fn linear_predictor(profile: &ProfileInput, model: &PooledModel) -> Result<LinearPredictor, RiskError> {
    model.validate()?;
    let (values, warnings) = match profile {
        ProfileInput::Reference(_) => ([0.0; 10], Vec::new()),
        ProfileInput::Covariates(c) => {
            c.validate()?;
            (*transform_and_center(c, &model.centering)?.values(), extrapolation_warnings(c))
        }
    };
    let intercept = model.intercept.recalibrated;
    let contributions: Vec<Contribution> = FACTOR_NAMES
        .iter()
        .zip(values)
        .zip(&model.coefficients)
        .map(|((name, v), c)| Contribution {
            factor: (*name).into(),
            value: v,
            coefficient: c.estimate,
            contribution: c.estimate * v,
        })
        .collect();
    let logit = intercept + contributions.iter().map(|c| c.contribution).sum::<f64>();
    Ok(LinearPredictor {
        intercept,
        logit,
        contributions,
        warnings,
    })
}

pub fn predict_risk(profile: &ProfileInput, model: &PooledModel) -> Result<Prediction, RiskError> {
    let lp = linear_predictor(profile, model)?;
    Ok(Prediction {
        risk: expit(lp.logit),
        linear_predictor: lp.logit,
        contributions: lp.contributions,
        warnings: lp.warnings,
    })
}

/// Rounds half-up to three decimals, the precision used in interfaces.
pub fn round_risk(risk: f64) -> f64 {
    (risk * 1000.0 + 0.5).floor() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Gender;

    fn profile() -> Covariates {
        Covariates {
            age: 40.0,
            disease_duration: 8.0,
            edss: 2.0,
            gd_lesions: 0,
            prior_relapses: 1,
            months_since_last_relapse: 12.0,
            treatment_naive: false,
            gender: Gender::Female,
            on_treatment: true,
        }
    }

    #[test]
    fn reference_profile_gives_intercept() {
        let m = PooledModel::published();
        let lp = linear_predictor(&ProfileInput::Reference(ReferenceProfile::Reference), &m).unwrap();
        assert_eq!(lp.logit, -1.884);
        let p = predict_risk(&ProfileInput::Reference(ReferenceProfile::Reference), &m).unwrap();
        assert_eq!(round_risk(p.risk), 0.132);
    }

    #[test]
    fn edss_and_gender_deltas() {
        let m = PooledModel::published();
        let a = profile();
        let mut b = a.clone();
        b.edss += 1.0;
        let d = linear_predictor(&b.clone().into(), &m).unwrap().logit
            - linear_predictor(&a.clone().into(), &m).unwrap().logit;
        assert!((d - 0.124).abs() < 1e-9);
        let mut male = a.clone();
        male.gender = Gender::Male;
        let d = linear_predictor(&a.into(), &m).unwrap().logit - linear_predictor(&male.into(), &m).unwrap().logit;
        assert!((d - 0.253).abs() < 1e-9);
    }

    #[test]
    fn decomposition_is_exact() {
        let m = PooledModel::published();
        let lp = linear_predictor(&profile().into(), &m).unwrap();
        let sum: f64 = lp.contributions.iter().map(|c| c.contribution).sum();
        assert!((lp.intercept + sum - lp.logit).abs() < 1e-12);
    }

    #[test]
    fn reference_parses_from_json() {
        let p: ProfileInput = serde_json::from_str("\"reference\"").unwrap();
        assert_eq!(p, ProfileInput::Reference(ReferenceProfile::Reference));
        let c: ProfileInput = serde_json::from_str(&serde_json::to_string(&profile()).unwrap()).unwrap();
        assert_eq!(c, ProfileInput::Covariates(profile()));
    }

    #[test]
    fn extrapolation_is_warned_not_rejected() {
        let m = PooledModel::published();
        let mut c = profile();
        c.age = 80.0;
        let p = predict_risk(&c.into(), &m).unwrap();
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_risk(0.12351), 0.124);
        assert_eq!(round_risk(0.12349), 0.123);
    }
}
