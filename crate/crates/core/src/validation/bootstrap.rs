//! Bootstrap optimism of the AUC and calibration slope, using plain fixed-effects
//! logistic refits in place of the full Bayesian model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auc, calibration_slope_intercept, ValidationError};
use crate::glm::{fit_logistic_stabilized, Design};

/// Label carried by every optimism estimate produced here.
pub const OPTIMISM_LABEL: &str = "rough optimism estimate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Cycle rows are resampled independently.
    Cycle,
    /// Whole patients are resampled, keeping their cycles together.
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
    pub resampling: Resampling,
    pub max_retries: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 500,
            seed: 1,
            resampling: Resampling::Cycle,
            max_retries: 10,
        }
    }
}

pub const MIN_REPLICATES: usize = 50;

/// One (imputed) dataset: design with intercept column, outcomes, and optional patient clusters.
#[derive(Debug, Clone)]
pub struct OptimismDataset {
    pub design: Design,
    pub outcomes: Vec<bool>,
    pub clusters: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub auc: f64,
    pub calibration_slope: f64,
}

impl Performance {
    fn minus(self, other: Self) -> Self {
        Self {
            auc: self.auc - other.auc,
            calibration_slope: self.calibration_slope - other.calibration_slope,
        }
    }

    fn mean(items: &[Self]) -> Self {
        let n = items.len() as f64;
        Self {
            auc: items.iter().map(|p| p.auc).sum::<f64>() / n,
            calibration_slope: items.iter().map(|p| p.calibration_slope).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimismEstimate {
    pub label: String,
    pub replicates: usize,
    pub resampling: Resampling,
    /// Performance of a refit on each full dataset, pooled over datasets.
    pub apparent: Performance,
    /// Optimism averaged over replicates, pooled over datasets.
    pub optimism: Performance,
    /// apparent − optimism.
    pub corrected: Performance,
    pub per_dataset: Vec<Performance>,
    /// Replicates whose refit needed the ridge fallback.
    pub stabilized_refits: usize,
}

fn performance(y: &[bool], lp: &[f64]) -> Result<Performance, ValidationError> {
    Ok(Performance {
        auc: auc(lp, y)?,
        calibration_slope: calibration_slope_intercept(lp, y)?.slope,
    })
}

fn refit(design: &Design, y: &[bool]) -> Result<(Vec<f64>, bool), ValidationError> {
    let (fit, used) = fit_logistic_stabilized(design, y, super::SEPARATION_RIDGE)?;
    Ok((fit.coefficients, used))
}

fn resample(
    data: &OptimismDataset,
    cluster_rows: &[Vec<usize>],
    settings: &BootstrapSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, ValidationError> {
    let n = data.outcomes.len();
    for _ in 0..=settings.max_retries {
        let idx: Vec<usize> = match settings.resampling {
            Resampling::Cycle => (0..n).map(|_| rng.random_range(0..n)).collect(),
            Resampling::Patient => {
                let g = cluster_rows.len();
                (0..g)
                    .flat_map(|_| cluster_rows[rng.random_range(0..g)].iter().copied())
                    .collect()
            }
        };
        let events = idx.iter().filter(|i| data.outcomes[**i]).count();
        if events > 0 && events < idx.len() {
            return Ok(idx);
        }
    }
    Err(ValidationError::Resample(settings.max_retries))
}

/// Optimism per dataset (mean over `B` replicates), pooled by averaging over datasets.
pub fn bootstrap_optimism(
    datasets: &[OptimismDataset],
    settings: &BootstrapSettings,
) -> Result<OptimismEstimate, ValidationError> {
    if datasets.is_empty() {
        return Err(ValidationError::Parameter("no datasets".into()));
    }
    if settings.replicates < MIN_REPLICATES {
        return Err(ValidationError::Parameter(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
            settings.replicates
        )));
    }
    let mut apparent = Vec::new();
    let mut per_dataset = Vec::new();
    let mut stabilized = 0;
    for (d, data) in datasets.iter().enumerate() {
        let cluster_rows: Vec<Vec<usize>> = match (&data.clusters, settings.resampling) {
            (Some(c), Resampling::Patient) => {
                let g = c.iter().max().map_or(0, |m| m + 1);
                let mut rows = vec![Vec::new(); g];
                for (r, k) in c.iter().enumerate() {
                    rows[*k].push(r);
                }
                rows.retain(|r| !r.is_empty());
                rows
            }
            (None, Resampling::Patient) => {
                return Err(ValidationError::Parameter("patient resampling needs clusters".into()))
            }
            _ => Vec::new(),
        };
        let (beta, _) = refit(&data.design, &data.outcomes)?;
        let lp = data.design.linear_predictor(&beta);
        apparent.push(performance(&data.outcomes, &lp)?);

        let results: Vec<(Performance, bool)> = (0..settings.replicates)
            .into_par_iter()
            .map(|b| -> Result<(Performance, bool), ValidationError> {
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                rng.set_stream(((d as u64) << 32) | b as u64);
                let idx = resample(data, &cluster_rows, settings, &mut rng)?;
                let x = data.design.select(&idx);
                let y: Vec<bool> = idx.iter().map(|i| data.outcomes[*i]).collect();
                let (beta, used) = refit(&x, &y)?;
                let boot = performance(&y, &x.linear_predictor(&beta))?;
                let test = performance(&data.outcomes, &data.design.linear_predictor(&beta))?;
                Ok((boot.minus(test), used))
            })
            .collect::<Result<_, _>>()?;
        stabilized += results.iter().filter(|r| r.1).count();
        let opt: Vec<Performance> = results.into_iter().map(|r| r.0).collect();
        per_dataset.push(Performance::mean(&opt));
    }
    let apparent = Performance::mean(&apparent);
    let optimism = Performance::mean(&per_dataset);
    Ok(OptimismEstimate {
        label: OPTIMISM_LABEL.into(),
        replicates: settings.replicates,
        resampling: settings.resampling,
        apparent,
        optimism,
        corrected: apparent.minus(optimism),
        per_dataset,
        stabilized_refits: stabilized,
    })
}
