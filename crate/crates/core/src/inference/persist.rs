use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcceptanceRates, FitSummary, InferenceError, ModelFit, ModelSpec};
use crate::cohort::CenteringConstants;

pub const FIT_SCHEMA: &str = "fit/1";
const MANIFEST: &str = "fit.json";
const DRAWS: &str = "draws.csv";
const RANDOM_EFFECTS: &str = "random_effects.csv";

/// Summary of one fit, written next to its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub schema: String,
    pub coefficient_names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub rows: usize,
    pub patients: usize,
    pub centering: CenteringConstants,
    pub spec: ModelSpec,
    pub summary: FitSummary,
    pub acceptance: Vec<AcceptanceRates>,
    pub draws_file: String,
    pub random_effects_file: String,
}

impl FitManifest {
    pub fn from_fit(fit: &ModelFit) -> Self {
        Self {
            schema: FIT_SCHEMA.into(),
            coefficient_names: fit.draws.coefficient_names.clone(),
            chains: fit.draws.chains(),
            draws_per_chain: fit.draws.draws_per_chain(),
            rows: fit.rows,
            patients: fit.patients,
            centering: fit.centering,
            spec: fit.spec.clone(),
            summary: fit.summary.clone(),
            acceptance: fit.draws.acceptance.clone(),
            draws_file: DRAWS.into(),
            random_effects_file: RANDOM_EFFECTS.into(),
        }
    }

    /// Posterior means and variances of intercept and slopes.
    pub fn coefficient_moments(&self) -> Result<Vec<(f64, f64)>, InferenceError> {
        self.coefficient_names
            .iter()
            .map(|n| {
                self.summary
                    .get(n)
                    .map(|p| (p.mean, p.variance))
                    .ok_or_else(|| InferenceError::Data(format!("manifest lacks `{n}`")))
            })
            .collect()
    }
}

/// Writes `fit.json`, `draws.csv` and `random_effects.csv` into `dir`.
pub fn write_fit(dir: &Path, fit: &ModelFit) -> Result<FitManifest, InferenceError> {
    fs::create_dir_all(dir)?;
    let d = &fit.draws;
    let mut w = csv::Writer::from_path(dir.join(DRAWS))?;
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(d.coefficient_names.iter().cloned());
    header.extend(["sigma", "rho", "lambda"].map(String::from));
    w.write_record(&header)?;
    for c in 0..d.chains() {
        for i in 0..d.draws_per_chain() {
            let mut rec = vec![c.to_string(), i.to_string()];
            rec.extend(d.beta[c][i].iter().map(f64::to_string));
            rec.push(d.sigma[c][i].to_string());
            rec.push(d.rho[c][i].to_string());
            rec.push(d.lambda[c][i].to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(RANDOM_EFFECTS))?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(d.coefficient_names.iter().cloned());
    w.write_record(&header)?;
    for (label, u) in d.group_labels.iter().zip(&d.random_effect_means) {
        let mut rec = vec![label.clone()];
        rec.extend(u.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let manifest = FitManifest::from_fit(fit);
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a fit manifest from a fit directory or directly from its JSON file.
pub fn read_fit_manifest(path: &Path) -> Result<FitManifest, InferenceError> {
    let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let m: FitManifest = serde_json::from_str(&fs::read_to_string(file)?)?;
    if m.schema != FIT_SCHEMA {
        return Err(InferenceError::Data(format!(
            "unsupported fit schema `{}`",
            m.schema
        )));
    }
    Ok(m)
}
