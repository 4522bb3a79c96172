//! Multilevel joint-model multiple imputation under MAR.
//!
//! Target columns (those with missing cells) are modelled jointly as a latent
//! multivariate normal, regressed on complete predictor columns, with a
//! patient-level random intercept:
//!
//! ```text
//! y*_r = B' x_r + b_g(r) + e_r,   b_g ~ N(0, Ψ),   e_r ~ N(0, Σ)
//! ```
//!
//! Continuous targets are observed on the latent scale; binary targets are
//! `1{y* > 0}` with the latent residual variance fixed at one.
//!
//! Each iteration draws the latent cells with b integrated out, then b, B (flat
//! prior), Σ and Ψ (inverse-Wishart, identity scale), and finally Metropolis
//! scale and shear moves on (b, Ψ) that leave N(b | Ψ) invariant.

mod persist;
mod sampler;

pub use persist::{read_imputed_set, write_imputed_set, ImputedSetManifest, IMPUTED_SET_SCHEMA, MANIFEST_FILE};
pub use sampler::impute_frame;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CohortError, CohortTable, CycleRecord, Gender, LOG_OFFSET};
use crate::diagnostics::{diagnose, ParameterDiagnostics};

#[derive(Debug, Error)]
pub enum ImputationError {
    #[error("invalid imputation model: {0}")]
    Model(String),
    #[error("column `{0}` is fully missing and cannot be imputed")]
    FullyMissing(String),
    #[error("binary column `{0}` has a single observed class")]
    SingleClass(String),
    #[error("predictor `{0}` has missing values")]
    MissingPredictor(String),
    #[error("predictor design is singular")]
    Singular,
    #[error("non-finite draw at iteration {iteration} of chain {chain}")]
    Divergence { chain: usize, iteration: usize },
    #[error("diagnostics need at least {needed} retained iterations per chain, found {found}")]
    InsufficientTraces { needed: usize, found: usize },
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Binary columns hold 0.0 / 1.0.
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Rectangular data with a patient index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationFrame {
    pub columns: Vec<Column>,
    /// Dense group (patient) index per row.
    pub groups: Vec<usize>,
}

impl ImputationFrame {
    pub fn rows(&self) -> usize {
        self.groups.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Names of columns with at least one missing cell.
    pub fn incomplete_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.missing() > 0)
            .map(|c| c.name.clone())
            .collect()
    }

    /// Copy with the `k`-th imputation filled in.
    pub fn completed(&self, imputation: &FrameImputation, k: usize) -> ImputationFrame {
        let mut out = self.clone();
        for (j, name) in imputation.targets.iter().enumerate() {
            if let Some(col) = out.columns.iter_mut().find(|c| &c.name == name) {
                for (cell, v) in col.values.iter_mut().zip(&imputation.draws[k][j]) {
                    if cell.is_none() {
                        *cell = Some(*v);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationSettings {
    pub imputations: usize,
    pub burn_in: usize,
    /// Iterations between consecutive retained imputations.
    pub gap: usize,
    pub chains: usize,
    pub seed: u64,
    /// Inverse-Wishart degrees of freedom; defaults to the number of targets.
    pub prior_df: Option<f64>,
}

impl Default for ImputationSettings {
    fn default() -> Self {
        Self {
            imputations: 10,
            burn_in: 1000,
            gap: 100,
            chains: 1,
            seed: 1,
            prior_df: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationModel {
    pub targets: Vec<String>,
    pub predictors: Vec<String>,
    pub settings: ImputationSettings,
}

impl ImputationModel {
    /// Every incomplete column is a target; every complete one a predictor.
    pub fn for_frame(frame: &ImputationFrame, settings: ImputationSettings) -> Self {
        let (targets, predictors) = frame
            .columns
            .iter()
            .partition::<Vec<&Column>, _>(|c| c.missing() > 0);
        Self {
            targets: targets.into_iter().map(|c| c.name.clone()).collect(),
            predictors: predictors.into_iter().map(|c| c.name.clone()).collect(),
            settings,
        }
    }

    pub fn validate(&self, frame: &ImputationFrame) -> Result<(), ImputationError> {
        let s = &self.settings;
        if s.imputations < 2 {
            return Err(ImputationError::Model(format!("need at least 2 imputations, got {}", s.imputations)));
        }
        if s.gap == 0 || s.chains == 0 {
            return Err(ImputationError::Model("gap and chains must be positive".into()));
        }
        if s.chains > s.imputations {
            return Err(ImputationError::Model("more chains than imputations".into()));
        }
        let targets: BTreeSet<&str> = self.targets.iter().map(String::as_str).collect();
        let predictors: BTreeSet<&str> = self.predictors.iter().map(String::as_str).collect();
        if targets.len() != self.targets.len() || predictors.len() != self.predictors.len() {
            return Err(ImputationError::Model("duplicate column names".into()));
        }
        if let Some(both) = targets.intersection(&predictors).next() {
            return Err(ImputationError::Model(format!("`{both}` is both target and predictor")));
        }
        if frame.columns.iter().any(|c| c.values.len() != frame.rows()) {
            return Err(ImputationError::Model("column lengths differ from the group index".into()));
        }
        for name in self.targets.iter().chain(&self.predictors) {
            if frame.column(name).is_none() {
                return Err(ImputationError::Model(format!("unknown column `{name}`")));
            }
        }
        for name in &self.predictors {
            if frame.column(name).is_some_and(|c| c.missing() > 0) {
                return Err(ImputationError::MissingPredictor(name.clone()));
            }
        }
        for name in &self.targets {
            let col = frame.column(name).expect("checked above");
            let observed: Vec<f64> = col.values.iter().flatten().copied().collect();
            if observed.is_empty() && !col.values.is_empty() {
                return Err(ImputationError::FullyMissing(name.clone()));
            }
            if col.kind == ColumnKind::Binary && col.missing() > 0 {
                if observed.iter().any(|v| *v != 0.0 && *v != 1.0) {
                    return Err(ImputationError::Model(format!("binary column `{name}` has values other than 0/1")));
                }
                let ones = observed.iter().filter(|v| **v == 1.0).count();
                if ones == 0 || ones == observed.len() {
                    return Err(ImputationError::SingleClass(name.clone()));
                }
            }
        }
        let g = frame.groups.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; g];
        for k in &frame.groups {
            seen[*k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(ImputationError::Model("group index is not dense".into()));
        }
        Ok(())
    }
}

/// Per-chain parameter traces, `chains[c][p][t]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Traces {
    pub names: Vec<String>,
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl Traces {
    pub fn is_empty(&self) -> bool {
        self.names.is_empty() || self.chains.iter().all(|c| c.iter().all(Vec::is_empty))
    }

    pub fn retained(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.first().map_or(0, Vec::len))
            .min()
            .unwrap_or(0)
    }
}

/// Result of imputing a frame: `draws[k][j][row]` for imputation `k` and target `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImputation {
    pub targets: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub traces: Traces,
    /// Predictors without variation, left out of the regression.
    pub dropped_predictors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceThresholds {
    pub max_psrf: f64,
    pub min_ess: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        Self {
            max_psrf: 1.1,
            min_ess: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationDiagnostics {
    pub thresholds: ConvergenceThresholds,
    pub parameters: Vec<ParameterDiagnostics>,
    pub max_psrf: Option<f64>,
    pub min_ess: f64,
    pub passed: bool,
}

/// Split-chain diagnostics need this many retained iterations when there is one chain.
pub const MIN_SINGLE_CHAIN_TRACE: usize = 50;

pub fn imputation_diagnostics(
    traces: &Traces,
    thresholds: ConvergenceThresholds,
) -> Result<ImputationDiagnostics, ImputationError> {
    let retained = traces.retained();
    let needed = if traces.chains.len() <= 1 { MIN_SINGLE_CHAIN_TRACE } else { 4 };
    if traces.is_empty() || retained < needed {
        return Err(ImputationError::InsufficientTraces { needed, found: retained });
    }
    let parameters: Vec<ParameterDiagnostics> = traces
        .names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let chains: Vec<&[f64]> = traces.chains.iter().map(|c| &c[p][..retained]).collect();
            diagnose(name, &chains, true)
        })
        .collect();
    let max_psrf = parameters.iter().filter_map(|d| d.psrf).reduce(f64::max);
    let min_ess = parameters.iter().map(|d| d.ess).fold(f64::INFINITY, f64::min);
    let passed = parameters.iter().all(|d| {
        !d.zero_variance && d.psrf.is_some_and(|r| r <= thresholds.max_psrf) && d.ess >= thresholds.min_ess
    });
    Ok(ImputationDiagnostics {
        thresholds,
        parameters,
        max_psrf,
        min_ess,
        passed,
    })
}

/// m completed cohorts plus the traces of the imputation model.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSet {
    pub tables: Vec<CohortTable>,
    pub model: ImputationModel,
    pub traces: Traces,
    pub dropped_predictors: Vec<String>,
}

pub const GD_ANY: &str = "gd_any";
pub const ON_TREATMENT: &str = "on_treatment";

fn flag(v: bool) -> f64 {
    f64::from(u8::from(v))
}

/// Cohort columns on the imputation scale: the outcome, the ten factors before
/// centering, then any auxiliary columns.
pub fn cohort_frame(table: &CohortTable) -> ImputationFrame {
    let recs = table.records();
    let continuous = |name: &str, f: &dyn Fn(&CycleRecord) -> Option<f64>| Column {
        name: name.to_string(),
        kind: ColumnKind::Continuous,
        values: recs.iter().map(f).collect(),
    };
    let binary = |name: &str, f: &dyn Fn(&CycleRecord) -> Option<bool>| Column {
        name: name.to_string(),
        kind: ColumnKind::Binary,
        values: recs.iter().map(|r| f(r).map(flag)).collect(),
    };
    let mut columns = vec![
        binary("relapse", &|r| Some(r.relapse)),
        continuous("age", &|r| Some(r.age)),
        continuous("log_disease_duration", &|r| Some((r.disease_duration + LOG_OFFSET).ln())),
        continuous("edss", &|r| Some(r.edss)),
        binary(GD_ANY, &|r| r.gd_lesions.map(|g| g > 0)),
        binary("prior_relapses_1", &|r| Some(r.prior_relapses == 1)),
        binary("prior_relapses_2plus", &|r| Some(r.prior_relapses >= 2)),
        continuous("log_months_since_last_relapse", &|r| {
            Some((r.months_since_last_relapse + LOG_OFFSET).ln())
        }),
        binary("treatment_naive", &|r| Some(r.treatment_naive)),
        binary("gender_female", &|r| Some(r.gender == Gender::Female)),
        binary(ON_TREATMENT, &|r| r.on_treatment),
    ];
    for (j, name) in table.auxiliary_names().iter().enumerate() {
        columns.push(continuous(name, &|r| r.auxiliary[j]));
    }
    ImputationFrame {
        columns,
        groups: table.patient_groups().0,
    }
}

/// Writes imputed values back into the cohort's missing cells.
///
/// An imputed positive Gd indicator becomes a lesion count of 1.
fn complete_table(
    table: &CohortTable,
    imputation: &FrameImputation,
    k: usize,
) -> Result<CohortTable, ImputationError> {
    let aux = table.auxiliary_names();
    let mut records = table.records().to_vec();
    for (j, name) in imputation.targets.iter().enumerate() {
        let draws = &imputation.draws[k][j];
        let aux_index = aux.iter().position(|a| a == name);
        for (rec, v) in records.iter_mut().zip(draws) {
            match (name.as_str(), aux_index) {
                (GD_ANY, _) if rec.gd_lesions.is_none() => rec.gd_lesions = Some(u32::from(*v > 0.5)),
                (ON_TREATMENT, _) if rec.on_treatment.is_none() => rec.on_treatment = Some(*v > 0.5),
                (_, Some(a)) if rec.auxiliary[a].is_none() => rec.auxiliary[a] = Some(*v),
                _ => {}
            }
        }
    }
    Ok(CohortTable::new(records, aux.to_vec())?)
}

/// Default cohort imputation model: incomplete columns among Gd, treatment and
/// auxiliaries are targets, everything else predicts.
pub fn cohort_model(table: &CohortTable, settings: ImputationSettings) -> ImputationModel {
    ImputationModel::for_frame(&cohort_frame(table), settings)
}

pub fn fit_and_impute(table: &CohortTable, model: &ImputationModel) -> Result<ImputedSet, ImputationError> {
    let frame = cohort_frame(table);
    let fixed: BTreeSet<&str> = frame
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| *n != GD_ANY && *n != ON_TREATMENT && !table.auxiliary_names().iter().any(|a| a == n))
        .collect();
    if let Some(t) = model.targets.iter().find(|t| fixed.contains(t.as_str())) {
        return Err(ImputationError::Model(format!("`{t}` is always observed and cannot be a target")));
    }
    let imputation = impute_frame(&frame, model)?;
    let tables = (0..model.settings.imputations)
        .map(|k| complete_table(table, &imputation, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ImputedSet {
        tables,
        model: model.clone(),
        traces: imputation.traces,
        dropped_predictors: imputation.dropped_predictors,
    })
}
