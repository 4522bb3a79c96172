//! Longitudinal cohort data: one record per (patient, two-year cycle).
//!
//! Records are ingested from a fixed-order CSV, validated, and converted into
//! the ten-slot factor vector used by every model in the crate.

mod csv_io;
mod factors;
mod sample_size;
mod simulate;

pub use csv_io::{load_cohort, write_cohort, COLUMNS};
pub use factors::{
    transform_and_center, CenteringConstants, FactorValues, FactorVector, FACTOR_COUNT,
    FACTOR_NAMES, LOG_OFFSET,
};
pub use sample_size::{compute_epv, riley_sample_size, Epv, RileySizes, SampleSizeError};
pub use simulate::{simulate_cohort, MissingnessRates, SimulationConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("header mismatch at column {position}: expected `{expected}`, found `{found}`")]
    Header {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: value {value} out of range")]
    OutOfRange {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value not allowed")]
    MissingNotAllowed { row: usize, column: String },
    #[error("row {row}: duplicate key (patient `{patient_id}`, cycle {cycle_index})")]
    DuplicateKey {
        row: usize,
        patient_id: String,
        cycle_index: u8,
    },
    #[error("row {row}: wrong number of fields ({found}, expected at least {expected})")]
    FieldCount {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("covariate `{0}` is missing; impute before transforming")]
    MissingCovariate(&'static str),
    #[error("covariate `{column}` has invalid value {value}")]
    Domain { column: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }
}

/// Complete clinical covariates for one cycle (or one patient profile).
///
/// Field names double as the CSV column names and the JSON profile keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariates {
    pub age: f64,
    pub disease_duration: f64,
    pub edss: f64,
    pub gd_lesions: u32,
    pub prior_relapses: u32,
    pub months_since_last_relapse: f64,
    #[serde(with = "bool_as_int")]
    pub treatment_naive: bool,
    pub gender: Gender,
    #[serde(with = "bool_as_int")]
    pub on_treatment: bool,
}

impl Covariates {
    /// Range checks shared by ingestion and the risk calculator.
    pub fn validate(&self) -> Result<(), CohortError> {
        check_range("age", self.age, 10.0, 100.0)?;
        check_range("disease_duration", self.disease_duration, 0.0, f64::INFINITY)?;
        check_range("edss", self.edss, 0.0, 10.0)?;
        check_range(
            "months_since_last_relapse",
            self.months_since_last_relapse,
            0.0,
            f64::INFINITY,
        )?;
        Ok(())
    }
}

fn check_range(column: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), CohortError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(CohortError::Domain { column, value })
    }
}

pub(crate) mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("expected 0 or 1, found {other}"))),
        }
    }
}

/// One patient-cycle row as ingested; `gd_lesions` and `on_treatment` may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub patient_id: String,
    pub cycle_index: u8,
    pub relapse: bool,
    pub age: f64,
    pub disease_duration: f64,
    pub edss: f64,
    pub gd_lesions: Option<u32>,
    pub prior_relapses: u32,
    pub months_since_last_relapse: f64,
    pub treatment_naive: bool,
    pub gender: Gender,
    pub on_treatment: Option<bool>,
    /// Extra numeric columns after the fixed schema, usable as imputation auxiliaries.
    pub auxiliary: Vec<Option<f64>>,
}

impl CycleRecord {
    pub fn covariates(&self) -> Result<Covariates, CohortError> {
        Ok(Covariates {
            age: self.age,
            disease_duration: self.disease_duration,
            edss: self.edss,
            gd_lesions: self
                .gd_lesions
                .ok_or(CohortError::MissingCovariate("gd_lesions"))?,
            prior_relapses: self.prior_relapses,
            months_since_last_relapse: self.months_since_last_relapse,
            treatment_naive: self.treatment_naive,
            gender: self.gender,
            on_treatment: self
                .on_treatment
                .ok_or(CohortError::MissingCovariate("on_treatment"))?,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.gd_lesions.is_some()
            && self.on_treatment.is_some()
            && self.auxiliary.iter().all(Option::is_some)
    }
}

/// Validated, immutable patient × cycle table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortTable {
    records: Vec<CycleRecord>,
    auxiliary_names: Vec<String>,
}

impl CohortTable {
    /// Builds a table, enforcing key uniqueness, cycle bounds and value ranges.
    pub fn new(
        records: Vec<CycleRecord>,
        auxiliary_names: Vec<String>,
    ) -> Result<Self, CohortError> {
        let mut seen: BTreeMap<(&str, u8), usize> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            if !(1..=3).contains(&rec.cycle_index) {
                return Err(CohortError::OutOfRange {
                    row,
                    column: "cycle_index".into(),
                    value: rec.cycle_index.to_string(),
                });
            }
            if rec.auxiliary.len() != auxiliary_names.len() {
                return Err(CohortError::FieldCount {
                    row,
                    found: COLUMNS.len() + rec.auxiliary.len(),
                    expected: COLUMNS.len() + auxiliary_names.len(),
                });
            }
            validate_record(row, rec)?;
            if seen.insert((&rec.patient_id, rec.cycle_index), row).is_some() {
                return Err(CohortError::DuplicateKey {
                    row,
                    patient_id: rec.patient_id.clone(),
                    cycle_index: rec.cycle_index,
                });
            }
        }
        Ok(Self {
            records,
            auxiliary_names,
        })
    }

    pub fn records(&self) -> &[CycleRecord] {
        &self.records
    }

    pub fn auxiliary_names(&self) -> &[String] {
        &self.auxiliary_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> usize {
        self.records.iter().filter(|r| r.relapse).count()
    }

    /// Fraction of cycles with a relapse; `None` for an empty table.
    pub fn prevalence(&self) -> Option<f64> {
        if self.records.is_empty() {
            None
        } else {
            Some(self.events() as f64 / self.records.len() as f64)
        }
    }

    pub fn outcomes(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.relapse).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.records.iter().all(CycleRecord::is_complete)
    }

    /// Number of distinct patients.
    pub fn patient_count(&self) -> usize {
        self.patient_groups().1.len()
    }

    /// Dense patient index per row (first-appearance order) and the rows of each patient.
    pub fn patient_groups(&self) -> (Vec<usize>, Vec<Vec<usize>>) {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut per_row = Vec::with_capacity(self.records.len());
        for (row, rec) in self.records.iter().enumerate() {
            let next = groups.len();
            let g = *index.entry(rec.patient_id.as_str()).or_insert(next);
            if g == groups.len() {
                groups.push(Vec::new());
            }
            groups[g].push(row);
            per_row.push(g);
        }
        (per_row, groups)
    }

    pub fn missing_report(&self) -> MissingReport {
        let mut missing = BTreeMap::new();
        let count = |f: &dyn Fn(&CycleRecord) -> bool| self.records.iter().filter(|r| f(r)).count();
        missing.insert("gd_lesions".to_string(), count(&|r| r.gd_lesions.is_none()));
        missing.insert("on_treatment".to_string(), count(&|r| r.on_treatment.is_none()));
        for (j, name) in self.auxiliary_names.iter().enumerate() {
            missing.insert(name.clone(), count(&|r| r.auxiliary[j].is_none()));
        }
        MissingReport {
            rows: self.records.len(),
            missing,
        }
    }

    /// Transformed-and-centered factors for every row; requires complete covariates.
    pub fn factor_matrix(
        &self,
        constants: &CenteringConstants,
    ) -> Result<Vec<FactorVector>, CohortError> {
        self.records
            .iter()
            .map(|r| transform_and_center(&r.covariates()?, constants))
            .collect()
    }

    /// Means of the transformed (uncentered) factors over the table.
    pub fn factor_means(&self) -> Result<CenteringConstants, CohortError> {
        if self.records.is_empty() {
            return Err(CohortError::Parameter("empty cohort has no factor means".into()));
        }
        let zero = CenteringConstants::zero();
        let mut sums = [0.0; FACTOR_COUNT];
        for fv in self.factor_matrix(&zero)? {
            for (s, v) in sums.iter_mut().zip(fv.values()) {
                *s += v;
            }
        }
        let n = self.records.len() as f64;
        Ok(CenteringConstants::from_array(sums.map(|s| s / n)))
    }
}

fn validate_record(row: usize, rec: &CycleRecord) -> Result<(), CohortError> {
    let check = |column: &str, value: f64, lo: f64, hi: f64| {
        if value.is_finite() && value >= lo && value <= hi {
            Ok(())
        } else {
            Err(CohortError::OutOfRange {
                row,
                column: column.to_string(),
                value: value.to_string(),
            })
        }
    };
    check("age", rec.age, 10.0, 100.0)?;
    check("disease_duration", rec.disease_duration, 0.0, f64::INFINITY)?;
    check("edss", rec.edss, 0.0, 10.0)?;
    check(
        "months_since_last_relapse",
        rec.months_since_last_relapse,
        0.0,
        f64::INFINITY,
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingReport {
    pub rows: usize,
    pub missing: BTreeMap<String, usize>,
}

impl MissingReport {
    pub fn fraction(&self, column: &str) -> Option<f64> {
        let count = *self.missing.get(column)?;
        (self.rows > 0).then(|| count as f64 / self.rows as f64)
    }
}
