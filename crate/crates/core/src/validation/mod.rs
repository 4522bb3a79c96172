//! Apparent and optimism-corrected performance of a risk model.

mod bootstrap;
mod calibration;
mod discrimination;

pub use bootstrap::{
    bootstrap_optimism, BootstrapSettings, OptimismDataset, OptimismEstimate, Performance, Resampling,
    MIN_REPLICATES, OPTIMISM_LABEL,
};
pub use calibration::{
    calibration_curve, calibration_slope_intercept, loess_at, CalibrationCurve, CalibrationFit, CurvePoint,
    DecileBin, CURVE_GRID, MIN_CURVE_N, SEPARATION_RIDGE,
};
pub use discrimination::{auc, auc_with_ci, AucEstimate};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CohortError, CohortTable};
use crate::glm::{Design, GlmError};
use crate::pooling::{PoolingError, PooledModel};
use crate::stats::expit;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("outcomes contain a single class")]
    SingleClass,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("bootstrap resample had a single outcome class after {0} retries")]
    Resample(usize),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Model(#[from] PoolingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const REPORT_SCHEMA: &str = "validation-report/1";

/// Which apparent performance the optimism is subtracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApparentBasis {
    /// A fixed-effects refit on each imputed table, matching the bootstrap refits.
    Refit,
    /// The supplied model scored on each imputed table.
    Model,
}

/// Thresholds deciding whether a validation run passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGate {
    pub min_corrected_auc: f64,
    pub slope_range: [f64; 2],
}

impl Default for QualityGate {
    fn default() -> Self {
        Self {
            min_corrected_auc: 0.5,
            slope_range: [0.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSettings {
    pub bootstrap: BootstrapSettings,
    pub span: f64,
    pub apparent_basis: ApparentBasis,
    pub gate: QualityGate,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            bootstrap: BootstrapSettings::default(),
            span: 0.75,
            apparent_basis: ApparentBasis::Refit,
            gate: QualityGate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPerformance {
    pub auc: AucEstimate,
    pub calibration: CalibrationFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RugPoint {
    pub predicted: f64,
    pub outcome: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: String,
    pub model_version: String,
    pub rows: usize,
    pub imputations: usize,
    /// The model scored on the imputed tables; every field is averaged over tables.
    pub model_apparent: ModelPerformance,
    pub optimism: OptimismEstimate,
    pub apparent_basis: ApparentBasis,
    pub corrected: Performance,
    pub calibration_curve: CalibrationCurve,
    pub rug: Vec<RugPoint>,
    pub gate: QualityGate,
    pub passed: bool,
    pub warnings: Vec<String>,
}

fn average_performance(items: &[ModelPerformance]) -> ModelPerformance {
    let n = items.len() as f64;
    let avg = |f: &dyn Fn(&ModelPerformance) -> f64| items.iter().map(f).sum::<f64>() / n;
    ModelPerformance {
        auc: AucEstimate {
            auc: avg(&|p| p.auc.auc),
            se: avg(&|p| p.auc.se),
            lower: avg(&|p| p.auc.lower),
            upper: avg(&|p| p.auc.upper),
        },
        calibration: CalibrationFit {
            slope: avg(&|p| p.calibration.slope),
            slope_ci: [avg(&|p| p.calibration.slope_ci[0]), avg(&|p| p.calibration.slope_ci[1])],
            intercept: avg(&|p| p.calibration.intercept),
            intercept_ci: [
                avg(&|p| p.calibration.intercept_ci[0]),
                avg(&|p| p.calibration.intercept_ci[1]),
            ],
            separated: items.iter().any(|p| p.calibration.separated),
        },
    }
}

/// Bootstrap dataset for a cohort table under the model's centering.
pub fn optimism_dataset(model: &PooledModel, table: &CohortTable) -> Result<OptimismDataset, ValidationError> {
    let rows: Vec<[f64; 10]> = table
        .factor_matrix(&model.centering)?
        .iter()
        .map(|f| *f.values())
        .collect();
    Ok(OptimismDataset {
        design: Design::with_intercept(&rows),
        outcomes: table.outcomes(),
        clusters: Some(table.patient_groups().0),
    })
}

/// Scores `model` on each imputed table, runs the bootstrap and builds the report.
pub fn validate_model(
    model: &PooledModel,
    tables: &[CohortTable],
    settings: &ValidationSettings,
) -> Result<ValidationReport, ValidationError> {
    let first = tables.first().ok_or_else(|| ValidationError::Parameter("no imputed tables".into()))?;
    let n = first.len();
    if tables.iter().any(|t| t.len() != n || t.outcomes() != first.outcomes()) {
        return Err(ValidationError::Shape("imputed tables differ in rows or outcomes".into()));
    }
    let outcomes = first.outcomes();
    let mut per_table = Vec::new();
    let mut mean_risk = vec![0.0; n];
    for t in tables {
        let lp = model.linear_predictors(t)?;
        for (m, v) in mean_risk.iter_mut().zip(&lp) {
            *m += expit(*v) / tables.len() as f64;
        }
        per_table.push(ModelPerformance {
            auc: auc_with_ci(&lp, &outcomes)?,
            calibration: calibration_slope_intercept(&lp, &outcomes)?,
        });
    }
    let model_apparent = average_performance(&per_table);
    let datasets: Vec<OptimismDataset> = tables
        .iter()
        .map(|t| optimism_dataset(model, t))
        .collect::<Result<_, _>>()?;
    let optimism = bootstrap_optimism(&datasets, &settings.bootstrap)?;
    let base = match settings.apparent_basis {
        ApparentBasis::Refit => optimism.apparent,
        ApparentBasis::Model => Performance {
            auc: model_apparent.auc.auc,
            calibration_slope: model_apparent.calibration.slope,
        },
    };
    let corrected = Performance {
        auc: base.auc - optimism.optimism.auc,
        calibration_slope: base.calibration_slope - optimism.optimism.calibration_slope,
    };
    let calibration_curve = calibration_curve(&mean_risk, &outcomes, settings.span)?;
    let mut warnings = calibration_curve.warnings.clone();
    if model_apparent.calibration.separated {
        warnings.push("calibration refit separated; penalized refit used".into());
    }
    let gate = settings.gate;
    let passed = corrected.auc > gate.min_corrected_auc
        && corrected.calibration_slope >= gate.slope_range[0]
        && corrected.calibration_slope <= gate.slope_range[1];
    if !passed {
        warnings.push("quality gate failed".into());
    }
    Ok(ValidationReport {
        schema: REPORT_SCHEMA.into(),
        model_version: model.version.clone(),
        rows: n,
        imputations: tables.len(),
        model_apparent,
        optimism,
        apparent_basis: settings.apparent_basis,
        corrected,
        calibration_curve,
        rug: mean_risk
            .iter()
            .zip(&outcomes)
            .map(|(p, y)| RugPoint {
                predicted: *p,
                outcome: *y,
            })
            .collect(),
        gate,
        passed,
        warnings,
    })
}

pub const REPORT_FILE: &str = "validation.json";
pub const CURVE_FILE: &str = "calibration_curve.csv";
pub const RUG_FILE: &str = "calibration_rug.csv";

/// Writes the report JSON, the loess curve CSV and the rug CSV into `dir`.
pub fn write_report(dir: &Path, report: &ValidationReport) -> Result<(), ValidationError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)? + "\n")?;
    let mut w = csv::Writer::from_path(dir.join(CURVE_FILE))?;
    w.write_record(["predicted", "observed"])?;
    for p in &report.calibration_curve.points {
        w.write_record([p.predicted.to_string(), p.observed.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(RUG_FILE))?;
    w.write_record(["predicted", "outcome"])?;
    for r in &report.rug {
        w.write_record([r.predicted.to_string(), u8::from(r.outcome).to_string()])?;
    }
    w.flush()?;
    Ok(())
}
