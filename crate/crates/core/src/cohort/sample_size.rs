//! Sample-size adequacy: events per variable and the three minimum-size criteria
//! for a binary-outcome prediction model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CohortTable;

#[derive(Debug, Error, PartialEq)]
pub enum SampleSizeError {
    #[error("model degrees of freedom must be positive")]
    ZeroDf,
    #[error("{name} must lie in {range}, got {value}")]
    Parameter {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("Cox-Snell R² {r2} exceeds the maximum {max:.4} achievable at prevalence {prevalence}")]
    R2AboveMaximum { r2: f64, max: f64, prevalence: f64 },
}

/// Conventional minimum events per variable below which the fit is flagged.
pub const EPV_ADEQUATE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epv {
    pub events: usize,
    pub df: u32,
    /// Full-precision ratio.
    pub value: f64,
    pub warning: Option<String>,
}

impl Epv {
    /// Ratio rounded to one decimal for display.
    pub fn rounded(&self) -> f64 {
        (self.value * 10.0).round() / 10.0
    }
}

impl std::fmt::Display for Epv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}", self.value)
    }
}

pub fn compute_epv(cohort: &CohortTable, model_df: u32) -> Result<Epv, SampleSizeError> {
    epv_from_events(cohort.events(), model_df)
}

pub(crate) fn epv_from_events(events: usize, df: u32) -> Result<Epv, SampleSizeError> {
    if df == 0 {
        return Err(SampleSizeError::ZeroDf);
    }
    let value = events as f64 / f64::from(df);
    let warning = if events == 0 {
        Some("no outcome events: model cannot be estimated".to_string())
    } else if value < EPV_ADEQUATE {
        Some(format!("EPV {value:.1} below {EPV_ADEQUATE}"))
    } else {
        None
    };
    Ok(Epv {
        events,
        df,
        value,
        warning,
    })
}

impl Epv {
    pub fn from_events(events: usize, df: u32) -> Result<Self, SampleSizeError> {
        epv_from_events(events, df)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RileySizes {
    /// Minimum n so expected uniform shrinkage of coefficients meets the target.
    pub coefficient_shrinkage: u64,
    /// Minimum n for a small gap between apparent and adjusted Nagelkerke R².
    pub optimism_in_fit: u64,
    /// Minimum n to estimate the overall outcome risk within the margin.
    pub overall_risk: u64,
    pub r2_max: f64,
    /// Shrinkage implied by the fit-optimism criterion.
    pub shrinkage_for_fit: f64,
}

impl RileySizes {
    pub fn minimum(&self) -> u64 {
        self.coefficient_shrinkage
            .max(self.optimism_in_fit)
            .max(self.overall_risk)
    }
}

const Z_95: f64 = 1.96;
const FIT_GAP: f64 = 0.05;

/// Maximum Cox-Snell R² for a binary outcome with the given prevalence.
pub fn max_r2_cox_snell(prevalence: f64) -> f64 {
    let p = prevalence;
    1.0 - (2.0 * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())).exp()
}

fn in_open_unit(name: &'static str, value: f64) -> Result<(), SampleSizeError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(SampleSizeError::Parameter {
            name,
            range: "(0, 1)",
            value,
        })
    }
}

fn shrinkage_size(params: f64, r2: f64, shrinkage: f64) -> f64 {
    params / ((shrinkage - 1.0) * (1.0 - r2 / shrinkage).ln())
}

pub fn riley_sample_size(
    params: u32,
    r2_cox_snell: f64,
    shrinkage_target: f64,
    prevalence: f64,
    risk_margin: f64,
) -> Result<RileySizes, SampleSizeError> {
    if params == 0 {
        return Err(SampleSizeError::ZeroDf);
    }
    in_open_unit("r2_cox_snell", r2_cox_snell)?;
    in_open_unit("shrinkage_target", shrinkage_target)?;
    in_open_unit("prevalence", prevalence)?;
    in_open_unit("risk_margin", risk_margin)?;
    let r2_max = max_r2_cox_snell(prevalence);
    if r2_cox_snell >= r2_max {
        return Err(SampleSizeError::R2AboveMaximum {
            r2: r2_cox_snell,
            max: r2_max,
            prevalence,
        });
    }
    let p = f64::from(params);
    let n1 = shrinkage_size(p, r2_cox_snell, shrinkage_target);
    let s2 = r2_cox_snell / (r2_cox_snell + FIT_GAP * r2_max);
    let n2 = shrinkage_size(p, r2_cox_snell, s2);
    let n3 = (Z_95 / risk_margin).powi(2) * prevalence * (1.0 - prevalence);
    Ok(RileySizes {
        coefficient_shrinkage: n1.ceil() as u64,
        optimism_in_fit: n2.ceil() as u64,
        overall_risk: n3.ceil() as u64,
        r2_max,
        shrinkage_for_fit: s2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epv_arithmetic() {
        let e = epv_from_events(302, 22).unwrap();
        assert_eq!(e.to_string(), "13.7");
        assert_eq!(e.value, 302.0 / 22.0);
        assert_eq!(epv_from_events(100, 10).unwrap().rounded(), 10.0);
        let zero = epv_from_events(0, 22).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.warning.is_some());
        assert_eq!(epv_from_events(5, 0), Err(SampleSizeError::ZeroDf));
    }

    #[test]
    fn overall_risk_closed_form() {
        let s = riley_sample_size(22, 0.09, 0.9, 0.5, 0.05).unwrap();
        assert_eq!(s.overall_risk, 385);
        let s = riley_sample_size(22, 0.09, 0.9, 0.172, 0.05).unwrap();
        let exact = (1.96f64 / 0.05).powi(2) * 0.172 * 0.828;
        assert!((exact - 218.8).abs() < 0.05);
        assert_eq!(s.overall_risk, 219);
    }

    #[test]
    fn r2_above_max_rejected() {
        let max = max_r2_cox_snell(0.172);
        assert!(matches!(
            riley_sample_size(22, max + 0.01, 0.9, 0.172, 0.05),
            Err(SampleSizeError::R2AboveMaximum { .. })
        ));
        assert!(riley_sample_size(22, 0.09, 1.0, 0.172, 0.05).is_err());
    }

    #[test]
    fn monotone_in_params_and_margin() {
        let mut prev = riley_sample_size(1, 0.09, 0.9, 0.172, 0.05).unwrap();
        for p in 2..40 {
            let s = riley_sample_size(p, 0.09, 0.9, 0.172, 0.05).unwrap();
            assert!(s.coefficient_shrinkage > prev.coefficient_shrinkage);
            assert!(s.optimism_in_fit > prev.optimism_in_fit);
            prev = s;
        }
        let mut prev = u64::MAX;
        for m in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let s = riley_sample_size(22, 0.09, 0.9, 0.172, m).unwrap();
            assert!(s.overall_risk < prev);
            prev = s.overall_risk;
        }
    }
}
