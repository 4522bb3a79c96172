use std::io::{Read, Write};

use super::{CohortError, CohortTable, CycleRecord, Gender};

/// Fixed CSV schema, in order. Any further columns are numeric auxiliaries.
pub const COLUMNS: [&str; 12] = [
    "patient_id",
    "cycle_index",
    "relapse",
    "age",
    "disease_duration",
    "edss",
    "gd_lesions",
    "prior_relapses",
    "months_since_last_relapse",
    "treatment_naive",
    "gender",
    "on_treatment",
];

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

struct RowParser<'a> {
    row: usize,
    fields: &'a csv::StringRecord,
}

impl RowParser<'_> {
    fn cell(&self, idx: usize) -> &str {
        self.fields.get(idx).unwrap_or("").trim()
    }

    fn err(&self, idx: usize, column: &str) -> CohortError {
        CohortError::Parse {
            row: self.row,
            column: column.to_string(),
            value: self.cell(idx).to_string(),
        }
    }

    fn required(&self, idx: usize) -> Result<&str, CohortError> {
        let cell = self.cell(idx);
        if is_missing(cell) {
            Err(CohortError::MissingNotAllowed {
                row: self.row,
                column: COLUMNS[idx].to_string(),
            })
        } else {
            Ok(cell)
        }
    }

    fn float(&self, idx: usize) -> Result<f64, CohortError> {
        let v: f64 = self
            .required(idx)?
            .parse()
            .map_err(|_| self.err(idx, COLUMNS[idx]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(idx, COLUMNS[idx]))
        }
    }

    fn count(&self, idx: usize) -> Result<u32, CohortError> {
        self.required(idx)?
            .parse()
            .map_err(|_| self.err(idx, COLUMNS[idx]))
    }

    fn optional_count(&self, idx: usize) -> Result<Option<u32>, CohortError> {
        if is_missing(self.cell(idx)) {
            return Ok(None);
        }
        self.count(idx).map(Some)
    }

    fn flag(&self, idx: usize) -> Result<bool, CohortError> {
        match self.required(idx)? {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.err(idx, COLUMNS[idx])),
        }
    }

    fn optional_flag(&self, idx: usize) -> Result<Option<bool>, CohortError> {
        if is_missing(self.cell(idx)) {
            return Ok(None);
        }
        self.flag(idx).map(Some)
    }
}

/// Reads a validated cohort from CSV bytes.
pub fn load_cohort<R: Read>(source: R) -> Result<CohortTable, CohortError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => {
            return Err(CohortError::Header {
                position: 1,
                expected: COLUMNS[0].into(),
                found: String::new(),
            })
        }
    };
    for (i, expected) in COLUMNS.iter().enumerate() {
        let found = header.get(i).map(str::trim).unwrap_or("");
        if found != *expected {
            return Err(CohortError::Header {
                position: i + 1,
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    let auxiliary_names: Vec<String> = header
        .iter()
        .skip(COLUMNS.len())
        .map(|s| s.trim().to_string())
        .collect();
    let width = COLUMNS.len() + auxiliary_names.len();

    let mut records = Vec::new();
    for (i, fields) in rows.enumerate() {
        let fields = fields?;
        let row = i + 1;
        if fields.len() != width {
            return Err(CohortError::FieldCount {
                row,
                found: fields.len(),
                expected: width,
            });
        }
        let p = RowParser {
            row,
            fields: &fields,
        };
        let cycle_index: u8 = p.required(1)?.parse().map_err(|_| p.err(1, COLUMNS[1]))?;
        let gender = match p.required(10)? {
            "F" => Gender::Female,
            "M" => Gender::Male,
            _ => return Err(p.err(10, COLUMNS[10])),
        };
        let mut auxiliary = Vec::with_capacity(auxiliary_names.len());
        for (j, name) in auxiliary_names.iter().enumerate() {
            let idx = COLUMNS.len() + j;
            let cell = p.cell(idx);
            if is_missing(cell) {
                auxiliary.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| p.err(idx, name))?;
                if !v.is_finite() {
                    return Err(p.err(idx, name));
                }
                auxiliary.push(Some(v));
            }
        }
        records.push(CycleRecord {
            patient_id: p.required(0)?.to_string(),
            cycle_index,
            relapse: p.flag(2)?,
            age: p.float(3)?,
            disease_duration: p.float(4)?,
            edss: p.float(5)?,
            gd_lesions: p.optional_count(6)?,
            prior_relapses: p.count(7)?,
            months_since_last_relapse: p.float(8)?,
            treatment_naive: p.flag(9)?,
            gender,
            on_treatment: p.optional_flag(11)?,
            auxiliary,
        });
    }
    CohortTable::new(records, auxiliary_names)
}

/// Writes the table in the ingestion schema; missing cells become `NA`.
///
/// Floats use the shortest round-trip representation, so reloading is lossless.
pub fn write_cohort<W: Write>(table: &CohortTable, sink: W) -> Result<(), CohortError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    header.extend(table.auxiliary_names().iter().map(String::as_str));
    w.write_record(&header)?;
    let na = || "NA".to_string();
    for r in table.records() {
        let mut row = vec![
            r.patient_id.clone(),
            r.cycle_index.to_string(),
            u8::from(r.relapse).to_string(),
            r.age.to_string(),
            r.disease_duration.to_string(),
            r.edss.to_string(),
            r.gd_lesions.map_or_else(na, |v| v.to_string()),
            r.prior_relapses.to_string(),
            r.months_since_last_relapse.to_string(),
            u8::from(r.treatment_naive).to_string(),
            r.gender.code().to_string(),
            r.on_treatment.map_or_else(na, |v| u8::from(v).to_string()),
        ];
        row.extend(r.auxiliary.iter().map(|v| v.map_or_else(na, |x| x.to_string())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
