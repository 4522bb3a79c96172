use serde::{Deserialize, Serialize};

use super::ValidationError;
use crate::glm::{fit_logistic_stabilized, Design};

const Z_975: f64 = 1.959963984540054;
/// Ridge penalty used when the calibration refit separates.
pub const SEPARATION_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub slope: f64,
    pub slope_ci: [f64; 2],
    pub intercept: f64,
    pub intercept_ci: [f64; 2],
    /// A penalized refit was used because the outcome was separated.
    pub separated: bool,
}

/// Logistic refit of the outcome on the linear predictor.
pub fn calibration_slope_intercept(
    linear_predictors: &[f64],
    outcomes: &[bool],
) -> Result<CalibrationFit, ValidationError> {
    if linear_predictors.len() != outcomes.len() {
        return Err(ValidationError::Shape("predictors and outcomes differ in length".into()));
    }
    if linear_predictors.iter().any(|v| !v.is_finite()) {
        return Err(ValidationError::NonFinite("linear predictors"));
    }
    let events = outcomes.iter().filter(|y| **y).count();
    if events == 0 || events == outcomes.len() {
        return Err(ValidationError::SingleClass);
    }
    let first = linear_predictors[0];
    if linear_predictors.iter().all(|v| *v == first) {
        return Err(ValidationError::Degenerate("linear predictor is constant; slope undefined".into()));
    }
    let rows: Vec<[f64; 1]> = linear_predictors.iter().map(|v| [*v]).collect();
    let (fit, separated) = fit_logistic_stabilized(&Design::with_intercept(&rows), outcomes, SEPARATION_RIDGE)?;
    let ci = |k: usize| {
        let b = fit.coefficients[k];
        let h = Z_975 * fit.std_error(k);
        [b - h, b + h]
    };
    Ok(CalibrationFit {
        slope: fit.coefficients[1],
        slope_ci: ci(1),
        intercept: fit.coefficients[0],
        intercept_ci: ci(0),
        separated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub predicted: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecileBin {
    pub mean_predicted: f64,
    pub observed: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub span: f64,
    /// Loess fit on an evenly spaced grid over the observed range; x strictly increasing.
    pub points: Vec<CurvePoint>,
    pub deciles: Vec<DecileBin>,
    pub warnings: Vec<String>,
}

pub const CURVE_GRID: usize = 101;
pub const MIN_CURVE_N: usize = 20;

/// Local-linear tricube-weighted fit of `y` on `x` at `x0`, using the nearest
/// `ceil(span·n)` points.
pub fn loess_at(x: &[f64], y: &[f64], x0: f64, span: f64) -> f64 {
    let n = x.len();
    let q = ((span * n as f64).ceil() as usize).clamp(1, n);
    let mut dist: Vec<f64> = x.iter().map(|v| (v - x0).abs()).collect();
    let (_, h, _) = dist.select_nth_unstable_by(q - 1, f64::total_cmp);
    let h = *h;
    let weight = |d: f64| -> f64 {
        if h <= 0.0 {
            if d == 0.0 {
                1.0
            } else {
                0.0
            }
        } else if d < h {
            (1.0 - (d / h).powi(3)).powi(3)
        } else {
            0.0
        }
    };
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let w = weight((x[i] - x0).abs());
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
    }
    if sw == 0.0 {
        return y.iter().sum::<f64>() / n as f64;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..n {
        let w = weight((x[i] - x0).abs());
        sxx += w * (x[i] - mx).powi(2);
        sxy += w * (x[i] - mx) * (y[i] - my);
    }
    if sxx <= 1e-14 * sw {
        my
    } else {
        my + sxy / sxx * (x0 - mx)
    }
}

fn deciles(predicted: &[f64], outcomes: &[bool]) -> Vec<DecileBin> {
    let mut idx: Vec<usize> = (0..predicted.len()).collect();
    idx.sort_by(|a, b| predicted[*a].total_cmp(&predicted[*b]));
    let n = idx.len();
    (0..10)
        .filter_map(|d| {
            let (lo, hi) = (d * n / 10, (d + 1) * n / 10);
            (hi > lo).then(|| {
                let bin = &idx[lo..hi];
                DecileBin {
                    mean_predicted: bin.iter().map(|i| predicted[*i]).sum::<f64>() / bin.len() as f64,
                    observed: bin.iter().filter(|i| outcomes[**i]).count() as f64 / bin.len() as f64,
                    n: bin.len(),
                }
            })
        })
        .collect()
}

/// Loess calibration curve (degree 1, tricube) plus decile-binned observed proportions.
pub fn calibration_curve(
    predicted: &[f64],
    outcomes: &[bool],
    span: f64,
) -> Result<CalibrationCurve, ValidationError> {
    if !(span > 0.0 && span <= 1.0) {
        return Err(ValidationError::Parameter(format!("span must be in (0, 1], got {span}")));
    }
    if predicted.len() != outcomes.len() {
        return Err(ValidationError::Shape("predictions and outcomes differ in length".into()));
    }
    if predicted.len() < MIN_CURVE_N {
        return Err(ValidationError::Parameter(format!(
            "calibration curve needs at least {MIN_CURVE_N} rows, got {}",
            predicted.len()
        )));
    }
    if predicted.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(ValidationError::Parameter("predictions must lie in (0, 1)".into()));
    }
    let y: Vec<f64> = outcomes.iter().map(|v| f64::from(u8::from(*v))).collect();
    let lo = predicted.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = predicted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut warnings = Vec::new();
    let points = if lo == hi {
        warnings.push("all predictions are equal; curve reduced to a single point".to_string());
        vec![CurvePoint {
            predicted: lo,
            observed: y.iter().sum::<f64>() / y.len() as f64,
        }]
    } else {
        (0..CURVE_GRID)
            .map(|i| {
                let x0 = lo + (hi - lo) * i as f64 / (CURVE_GRID - 1) as f64;
                CurvePoint {
                    predicted: x0,
                    observed: loess_at(predicted, &y, x0, span),
                }
            })
            .collect()
    };
    Ok(CalibrationCurve {
        span,
        points,
        deciles: deciles(predicted, outcomes),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loess_reproduces_lines() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.2 + 0.5 * v).collect();
        for x0 in [0.0, 0.33, 0.9] {
            assert!((loess_at(&x, &y, x0, 0.3) - (0.2 + 0.5 * x0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_lp_is_rejected() {
        let r = calibration_slope_intercept(&[0.3; 10], &[true, false, true, false, true, false, true, false, true, false]);
        assert!(matches!(r, Err(ValidationError::Degenerate(_))));
    }

    #[test]
    fn equal_predictions_give_single_point() {
        let y: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let c = calibration_curve(&[0.3; 30], &y, 0.75).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn bad_span() {
        let y: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let p: Vec<f64> = (0..30).map(|i| 0.1 + i as f64 / 100.0).collect();
        assert!(calibration_curve(&p, &y, 0.0).is_err());
        assert!(calibration_curve(&p, &y, 1.5).is_err());
        assert!(calibration_curve(&p[..10], &y[..10], 0.75).is_err());
    }
}
