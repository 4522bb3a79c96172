//! Decision curve analysis: net benefit of acting on the model versus treating
//! everyone or no one, over a grid of threshold probabilities.
//!
//! A subject is classified positive when `predicted >= a`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcaError {
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("prevalence must lie in (0, 1), got {0}")]
    Prevalence(f64),
    #[error("predictions must lie in [0, 1]")]
    Prediction,
    #[error("outcomes contain a single class")]
    SingleClass,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Strict-dominance margin when locating the useful range.
pub const DOMINANCE_TOLERANCE: f64 = 1e-12;

fn check_threshold(a: f64) -> Result<(), DcaError> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(DcaError::Threshold(a))
    }
}

/// Harm-to-benefit weight `a / (1 − a)`.
pub fn threshold_odds(a: f64) -> f64 {
    a / (1.0 - a)
}

/// `TP% − FP% · a/(1 − a)`, with fractions taken over the whole sample.
pub fn net_benefit_model(predicted: &[f64], outcomes: &[bool], a: f64) -> Result<f64, DcaError> {
    check_threshold(a)?;
    if predicted.len() != outcomes.len() || predicted.is_empty() {
        return Err(DcaError::Shape("predictions and outcomes must be non-empty and equal length".into()));
    }
    if predicted.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
        return Err(DcaError::Prediction);
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    for (p, y) in predicted.iter().zip(outcomes) {
        if *p >= a {
            if *y {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let n = predicted.len() as f64;
    Ok(tp as f64 / n - fp as f64 / n * threshold_odds(a))
}

/// `φ − (1 − φ) · a/(1 − a)`.
pub fn net_benefit_treat_all(prevalence: f64, a: f64) -> Result<f64, DcaError> {
    check_threshold(a)?;
    if !(prevalence > 0.0 && prevalence < 1.0) {
        return Err(DcaError::Prevalence(prevalence));
    }
    Ok(prevalence - (1.0 - prevalence) * threshold_odds(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: 0.01,
            stop: 0.50,
            step: 0.01,
        }
    }
}

impl GridSpec {
    /// Thresholds `start + i·step` up to `stop` inclusive.
    pub fn thresholds(&self) -> Result<Vec<f64>, DcaError> {
        if !(self.step > 0.0) || !(self.start <= self.stop) {
            return Err(DcaError::Grid(format!("{self:?}")));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        let grid: Vec<f64> = (0..count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect();
        for a in &grid {
            check_threshold(*a)?;
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRange {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve {
    pub thresholds: Vec<f64>,
    pub nb_model: Vec<f64>,
    pub nb_all: Vec<f64>,
    pub nb_none: Vec<f64>,
    pub prevalence: f64,
    /// Thresholds at which the model strictly beats both defaults.
    pub useful_thresholds: Vec<f64>,
    /// Smallest and largest useful threshold.
    pub useful_range: Option<ThresholdRange>,
    /// Share of rows whose predicted risk lies inside the useful range.
    pub fraction_rows_in_range: f64,
    /// Share of groups (patients) with at least one row inside the useful range, when groups are given.
    pub fraction_groups_in_range: Option<f64>,
}

pub fn decision_curve(
    predicted: &[f64],
    outcomes: &[bool],
    grid: &[f64],
    groups: Option<&[usize]>,
) -> Result<DecisionCurve, DcaError> {
    if grid.is_empty() {
        return Err(DcaError::Grid("empty grid".into()));
    }
    if predicted.len() != outcomes.len() {
        return Err(DcaError::Shape("predictions and outcomes differ in length".into()));
    }
    let events = outcomes.iter().filter(|y| **y).count();
    if events == 0 || events == outcomes.len() {
        return Err(DcaError::SingleClass);
    }
    let prevalence = events as f64 / outcomes.len() as f64;
    let mut nb_model = Vec::with_capacity(grid.len());
    let mut nb_all = Vec::with_capacity(grid.len());
    let mut useful = Vec::new();
    for &a in grid {
        let m = net_benefit_model(predicted, outcomes, a)?;
        let all = net_benefit_treat_all(prevalence, a)?;
        if m > all.max(0.0) + DOMINANCE_TOLERANCE {
            useful.push(a);
        }
        nb_model.push(m);
        nb_all.push(all);
    }
    let useful_range = match (useful.first(), useful.last()) {
        (Some(lo), Some(hi)) => Some(ThresholdRange { lower: *lo, upper: *hi }),
        _ => None,
    };
    let inside = |p: f64| useful_range.is_some_and(|r| p >= r.lower && p <= r.upper);
    let fraction_rows_in_range =
        predicted.iter().filter(|p| inside(**p)).count() as f64 / predicted.len() as f64;
    let fraction_groups_in_range = match groups {
        Some(g) if g.len() == predicted.len() => {
            let count = g.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; count];
            let mut hit = vec![false; count];
            for (p, k) in predicted.iter().zip(g) {
                seen[*k] = true;
                hit[*k] |= inside(*p);
            }
            let total = seen.iter().filter(|s| **s).count();
            Some(hit.iter().filter(|h| **h).count() as f64 / total as f64)
        }
        Some(_) => return Err(DcaError::Shape("groups differ in length from predictions".into())),
        None => None,
    };
    Ok(DecisionCurve {
        nb_none: vec![0.0; grid.len()],
        thresholds: grid.to_vec(),
        nb_model,
        nb_all,
        prevalence,
        useful_thresholds: useful,
        useful_range,
        fraction_rows_in_range,
        fraction_groups_in_range,
    })
}

pub const CURVE_FILE: &str = "decision_curve.csv";
pub const SUMMARY_FILE: &str = "decision_curve.json";

/// Writes the curve CSV (`threshold,nb_model,nb_all,nb_none`) and the JSON summary into `dir`.
pub fn write_decision_curve(dir: &Path, curve: &DecisionCurve) -> Result<(), DcaError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(CURVE_FILE))?;
    w.write_record(["threshold", "nb_model", "nb_all", "nb_none"])?;
    for i in 0..curve.thresholds.len() {
        w.write_record([
            curve.thresholds[i].to_string(),
            curve.nb_model[i].to_string(),
            curve.nb_all[i].to_string(),
            curve.nb_none[i].to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(curve)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_count() {
        let p = [0.3, 0.3, 0.1, 0.9];
        let y = [true, false, false, true];
        assert!((net_benefit_model(&p, &y, 0.2).unwrap() - 0.4375).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let y = [true, false, false, true, false];
        let p: Vec<f64> = y.iter().map(|v| f64::from(u8::from(*v))).collect();
        for a in [0.05, 0.3, 0.9] {
            assert!((net_benefit_model(&p, &y, a).unwrap() - 0.4).abs() < 1e-15);
        }
        assert_eq!(net_benefit_model(&[0.1, 0.2], &[true, false], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn tie_is_positive() {
        assert_eq!(net_benefit_model(&[0.2], &[true], 0.2).unwrap(), 1.0);
    }

    #[test]
    fn treat_all_values() {
        assert!(net_benefit_treat_all(0.172, 0.172).unwrap().abs() < 1e-12);
        assert!((net_benefit_treat_all(0.172, 0.10).unwrap() - 0.0800).abs() < 1e-4);
        assert!(net_benefit_treat_all(0.172, 0.999).unwrap() < -10.0);
        assert!(net_benefit_treat_all(0.172, 1.0).is_err());
        assert!(net_benefit_treat_all(0.172, 0.0).is_err());
    }

    #[test]
    fn default_grid() {
        let g = GridSpec::default().thresholds().unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[49], 0.5);
        assert_eq!(g[14], 0.15);
    }
}
