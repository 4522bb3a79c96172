//! Synthetic patient-cycle cohort drawn from the shipped model, written as CSV.
//!
//! cargo run --example simulate_cohort -- cohort.csv

use rrms_prognosis::cohort::{simulate_cohort, write_cohort, MissingnessRates, SimulationConfig};
use rrms_prognosis::pooling::PooledModel;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "cohort.csv".into());
    let config = SimulationConfig {
        missingness: MissingnessRates {
            gd_lesions: 0.43,
            on_treatment: 0.05,
        },
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 20)?;
    let report = table.missing_report();
    println!(
        "{} cycles from {} patients, {} relapses",
        table.len(),
        table.patient_count(),
        table.events()
    );
    println!("missing gd_lesions: {:.1}%", 100.0 * report.fraction("gd_lesions").unwrap_or(0.0));
    write_cohort(&table, std::fs::File::create(&out)?)?;
    println!("written to {out}");
    Ok(())
}
