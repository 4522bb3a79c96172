use serde::{Deserialize, Serialize};

use super::{CohortError, Covariates, Gender};

pub const FACTOR_COUNT: usize = 10;

/// Factor slots in design order.
pub const FACTOR_NAMES: [&str; FACTOR_COUNT] = [
    "age",
    "log_disease_duration",
    "edss",
    "gd_any",
    "prior_relapses_1",
    "prior_relapses_2plus",
    "log_months_since_last_relapse",
    "treatment_naive",
    "gender_female",
    "on_treatment",
];

/// Offset inside `ln(x + 10)` for disease duration and months since last relapse.
pub const LOG_OFFSET: f64 = 10.0;

/// One named value per factor slot. Used for centering constants and other per-factor data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorValues {
    pub age: f64,
    pub log_disease_duration: f64,
    pub edss: f64,
    pub gd_any: f64,
    pub prior_relapses_1: f64,
    pub prior_relapses_2plus: f64,
    pub log_months_since_last_relapse: f64,
    pub treatment_naive: f64,
    pub gender_female: f64,
    pub on_treatment: f64,
}

impl FactorValues {
    pub fn from_array(v: [f64; FACTOR_COUNT]) -> Self {
        Self {
            age: v[0],
            log_disease_duration: v[1],
            edss: v[2],
            gd_any: v[3],
            prior_relapses_1: v[4],
            prior_relapses_2plus: v[5],
            log_months_since_last_relapse: v[6],
            treatment_naive: v[7],
            gender_female: v[8],
            on_treatment: v[9],
        }
    }

    pub fn to_array(&self) -> [f64; FACTOR_COUNT] {
        [
            self.age,
            self.log_disease_duration,
            self.edss,
            self.gd_any,
            self.prior_relapses_1,
            self.prior_relapses_2plus,
            self.log_months_since_last_relapse,
            self.treatment_naive,
            self.gender_female,
            self.on_treatment,
        ]
    }

    pub fn zero() -> Self {
        Self::from_array([0.0; FACTOR_COUNT])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Per-factor means on the transformed scale, persisted with every model artifact.
pub type CenteringConstants = FactorValues;

/// Transformed and centered design vector for one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorVector([f64; FACTOR_COUNT]);

impl FactorVector {
    pub fn new(values: [f64; FACTOR_COUNT]) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64; FACTOR_COUNT] {
        &self.0
    }

    /// Recovers (age, disease duration, EDSS, months since last relapse) on the raw scale.
    pub fn continuous_inverse(&self, constants: &CenteringConstants) -> [f64; 4] {
        let c = constants.to_array();
        let v = &self.0;
        [
            v[0] + c[0],
            (v[1] + c[1]).exp() - LOG_OFFSET,
            v[2] + c[2],
            (v[6] + c[6]).exp() - LOG_OFFSET,
        ]
    }
}

/// Uncentered transformed factors.
pub(crate) fn transform(cov: &Covariates) -> Result<[f64; FACTOR_COUNT], CohortError> {
    if !(cov.disease_duration >= 0.0) {
        return Err(CohortError::Domain {
            column: "disease_duration",
            value: cov.disease_duration,
        });
    }
    if !(cov.months_since_last_relapse >= 0.0) {
        return Err(CohortError::Domain {
            column: "months_since_last_relapse",
            value: cov.months_since_last_relapse,
        });
    }
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    Ok([
        cov.age,
        (cov.disease_duration + LOG_OFFSET).ln(),
        cov.edss,
        indicator(cov.gd_lesions > 0),
        indicator(cov.prior_relapses == 1),
        indicator(cov.prior_relapses >= 2),
        (cov.months_since_last_relapse + LOG_OFFSET).ln(),
        indicator(cov.treatment_naive),
        indicator(cov.gender == Gender::Female),
        indicator(cov.on_treatment),
    ])
}

/// Applies the log transforms and categorical encodings, then subtracts the centering constants.
pub fn transform_and_center(
    cov: &Covariates,
    constants: &CenteringConstants,
) -> Result<FactorVector, CohortError> {
    let raw = transform(cov)?;
    let c = constants.to_array();
    let mut out = [0.0; FACTOR_COUNT];
    for k in 0..FACTOR_COUNT {
        out[k] = raw[k] - c[k];
    }
    Ok(FactorVector(out))
}
