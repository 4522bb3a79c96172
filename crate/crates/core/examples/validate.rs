//! Apparent and bootstrap optimism-corrected discrimination and calibration.
//!
//! cargo run --release --example validate -- validation/

use rrms_prognosis::cohort::{simulate_cohort, SimulationConfig};
use rrms_prognosis::pooling::PooledModel;
use rrms_prognosis::validation::{validate_model, write_report, ValidationSettings};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "validation".into());
    let model = PooledModel::published();
    let table = simulate_cohort(&SimulationConfig::default(), &model, 11)?;
    let report = validate_model(&model, &[table], &ValidationSettings::default())?;
    let a = &report.model_apparent;
    println!("apparent AUC {:.3} ({:.3}, {:.3})", a.auc.auc, a.auc.lower, a.auc.upper);
    println!("apparent calibration slope {:.3}", a.calibration.slope);
    println!(
        "{}: corrected AUC {:.3}, corrected slope {:.3}",
        report.optimism.label, report.corrected.auc, report.corrected.calibration_slope
    );
    println!("quality gate passed: {}", report.passed);
    write_report(std::path::Path::new(&out), &report)?;
    Ok(())
}
