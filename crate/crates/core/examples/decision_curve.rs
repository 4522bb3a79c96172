//! Net benefit of the model against treat-all and treat-none.
//!
//! cargo run --example decision_curve -- dca/

use rrms_prognosis::cohort::{simulate_cohort, SimulationConfig};
use rrms_prognosis::dca::{decision_curve, write_decision_curve, GridSpec};
use rrms_prognosis::pooling::PooledModel;
use rrms_prognosis::stats::expit;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "dca".into());
    let model = PooledModel::published();
    let table = simulate_cohort(&SimulationConfig::default(), &model, 12)?;
    let risk: Vec<f64> = model.linear_predictors(&table)?.into_iter().map(expit).collect();
    let grid = GridSpec::default().thresholds()?;
    let (groups, _) = table.patient_groups();
    let curve = decision_curve(&risk, &table.outcomes(), &grid, Some(&groups))?;
    println!("{:>9} {:>9} {:>9}", "threshold", "model", "treat all");
    for (i, a) in curve.thresholds.iter().enumerate().step_by(5) {
        println!("{a:>9.2} {:>9.4} {:>9.4}", curve.nb_model[i], curve.nb_all[i]);
    }
    match curve.useful_range {
        Some(r) => println!("useful for thresholds {:.2} to {:.2}", r.lower, r.upper),
        None => println!("never better than both defaults"),
    }
    write_decision_curve(std::path::Path::new(&out), &curve)?;
    Ok(())
}
