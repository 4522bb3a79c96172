//! Bayesian LASSO mixed-effects logistic fit on one complete cohort.
//!
//! cargo run --release --example fit_model -- fit/

use rrms_prognosis::cohort::{simulate_cohort, SimulationConfig};
use rrms_prognosis::inference::{fit_model, write_fit, ModelSpec, SamplerSettings};
use rrms_prognosis::pooling::PooledModel;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fit".into());
    let table = simulate_cohort(&SimulationConfig::default(), &PooledModel::published(), 3)?;
    let spec = ModelSpec {
        sampler: SamplerSettings {
            chains: 4,
            iterations: 4000,
            burn_in: 2000,
            seed: 7,
            ..Default::default()
        },
        ..Default::default()
    };
    let fit = fit_model(&table, &spec)?;
    println!("{:<32} {:>8} {:>8} {:>7} {:>6}", "parameter", "mean", "sd", "psrf", "ess");
    for p in &fit.summary.parameters {
        println!(
            "{:<32} {:>8.3} {:>8.3} {:>7.3} {:>6.0}",
            p.name,
            p.mean,
            p.sd,
            p.diagnostics.psrf.unwrap_or(f64::NAN),
            p.diagnostics.ess
        );
    }
    for w in &fit.summary.warnings {
        println!("warning: {w}");
    }
    write_fit(std::path::Path::new(&out), &fit)?;
    println!("draws written to {out}");
    Ok(())
}
