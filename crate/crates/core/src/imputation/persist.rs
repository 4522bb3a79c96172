use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    imputation_diagnostics, ConvergenceThresholds, ImputationDiagnostics, ImputationError, ImputationSettings,
    ImputedSet,
};
use crate::cohort::{load_cohort, write_cohort, CohortTable};

pub const IMPUTED_SET_SCHEMA: &str = "imputed-set/1";
pub const MANIFEST_FILE: &str = "imputed_set.json";
const TRACES_FILE: &str = "traces.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedSetManifest {
    pub schema: String,
    pub settings: ImputationSettings,
    pub targets: Vec<String>,
    pub predictors: Vec<String>,
    pub dropped_predictors: Vec<String>,
    /// Table files relative to the manifest, in imputation order.
    pub files: Vec<String>,
    pub traces_file: Option<String>,
    /// Absent when nothing was imputed.
    pub diagnostics: Option<ImputationDiagnostics>,
}

fn table_file(k: usize) -> String {
    format!("imputation_{:02}.csv", k + 1)
}

/// Writes every completed table, `traces.csv` and the manifest into `dir`.
pub fn write_imputed_set(dir: &Path, set: &ImputedSet) -> Result<ImputedSetManifest, ImputationError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (k, table) in set.tables.iter().enumerate() {
        let name = table_file(k);
        write_cohort(table, BufWriter::new(fs::File::create(dir.join(&name))?))?;
        files.push(name);
    }
    let (traces_file, diagnostics) = if set.traces.is_empty() {
        (None, None)
    } else {
        let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(dir.join(TRACES_FILE))?));
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(set.traces.names.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (c, chain) in set.traces.chains.iter().enumerate() {
            for t in 0..chain.first().map_or(0, Vec::len) {
                let mut rec = vec![c.to_string(), t.to_string()];
                rec.extend(chain.iter().map(|p| p[t].to_string()));
                w.write_record(&rec).map_err(csv_io)?;
            }
        }
        w.flush()?;
        let diagnostics = imputation_diagnostics(&set.traces, ConvergenceThresholds::default()).ok();
        (Some(TRACES_FILE.to_string()), diagnostics)
    };
    let manifest = ImputedSetManifest {
        schema: IMPUTED_SET_SCHEMA.into(),
        settings: set.model.settings.clone(),
        targets: set.model.targets.clone(),
        predictors: set.model.predictors.clone(),
        dropped_predictors: set.dropped_predictors.clone(),
        files,
        traces_file,
        diagnostics,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn csv_io(e: csv::Error) -> ImputationError {
    ImputationError::Io(e.into())
}

/// Reads a manifest (or the directory holding one) and its completed tables.
pub fn read_imputed_set(path: &Path) -> Result<(ImputedSetManifest, Vec<CohortTable>), ImputationError> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let manifest: ImputedSetManifest = serde_json::from_str(&fs::read_to_string(&file)?)?;
    if manifest.schema != IMPUTED_SET_SCHEMA {
        return Err(ImputationError::Model(format!(
            "expected schema `{IMPUTED_SET_SCHEMA}`, found `{}`",
            manifest.schema
        )));
    }
    let dir = file.parent().unwrap_or(Path::new("."));
    let tables = manifest
        .files
        .iter()
        .map(|f| Ok(load_cohort(fs::File::open(dir.join(f))?)?))
        .collect::<Result<Vec<_>, ImputationError>>()?;
    Ok((manifest, tables))
}
