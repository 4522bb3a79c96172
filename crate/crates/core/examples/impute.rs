//! Multiple imputation of missing gadolinium and treatment status.
//!
//! cargo run --release --example impute -- imputed/

use rrms_prognosis::cohort::{simulate_cohort, MissingnessRates, SimulationConfig};
use rrms_prognosis::imputation::{cohort_model, fit_and_impute, write_imputed_set, ImputationSettings};
use rrms_prognosis::pooling::PooledModel;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "imputed".into());
    let config = SimulationConfig {
        n_patients: 400,
        missingness: MissingnessRates {
            gd_lesions: 0.4,
            on_treatment: 0.05,
        },
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 1)?;
    let settings = ImputationSettings {
        imputations: 5,
        seed: 2,
        ..Default::default()
    };
    let model = cohort_model(&table, settings);
    println!("imputing {:?} from {} predictors", model.targets, model.predictors.len());
    let set = fit_and_impute(&table, &model)?;
    let manifest = write_imputed_set(std::path::Path::new(&out), &set)?;
    if let Some(d) = manifest.diagnostics {
        println!("max PSRF {:?}, min ESS {:.0}, passed {}", d.max_psrf, d.min_ess, d.passed);
    }
    let with_lesions = |t: &rrms_prognosis::cohort::CohortTable| {
        t.records().iter().filter(|r| r.gd_lesions.unwrap_or(0) > 0).count()
    };
    for (k, t) in set.tables.iter().enumerate() {
        println!("imputation {}: {} cycles with Gd lesions", k + 1, with_lesions(t));
    }
    println!("{} tables written to {out}", manifest.files.len());
    Ok(())
}
