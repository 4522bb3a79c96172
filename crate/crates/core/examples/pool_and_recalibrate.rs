//! Rubin's-rules pooling of fits on imputed tables, then intercept recalibration.
//!
//! cargo run --release --example pool_and_recalibrate

use rrms_prognosis::cohort::{simulate_cohort, MissingnessRates, SimulationConfig};
use rrms_prognosis::imputation::{cohort_model, fit_and_impute, ImputationSettings};
use rrms_prognosis::inference::{fit_model, FitManifest, ModelSpec, SamplerSettings};
use rrms_prognosis::pooling::{from_fits, recalibrate_intercept, PooledModel};

fn main() -> anyhow::Result<()> {
    let config = SimulationConfig {
        n_patients: 500,
        missingness: MissingnessRates {
            gd_lesions: 0.4,
            on_treatment: 0.0,
        },
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 5)?;
    let settings = ImputationSettings {
        imputations: 3,
        seed: 5,
        ..Default::default()
    };
    let set = fit_and_impute(&table, &cohort_model(&table, settings))?;

    // One shared centering so that pooled coefficients refer to the same scale.
    let centering = set.tables[0].factor_means()?;
    let mut manifests = Vec::new();
    for (k, t) in set.tables.iter().enumerate() {
        let spec = ModelSpec {
            sampler: SamplerSettings {
                chains: 2,
                iterations: 3000,
                burn_in: 1500,
                seed: 10 + k as u64,
                ..Default::default()
            },
            centering: Some(centering),
            ..Default::default()
        };
        manifests.push(FitManifest::from_fit(&fit_model(t, &spec)?));
    }
    let pooled = from_fits(&manifests, "example", vec!["in-memory".into()])?;
    let model = recalibrate_intercept(&pooled, &set.tables)?;
    println!(
        "intercept {:.3} -> {:.3} after recalibration",
        model.intercept.pooled, model.intercept.recalibrated
    );
    for c in &model.coefficients {
        println!("{:<32} {:>7.3}  OR {:.2} ({:.2}, {:.2})", c.name, c.estimate, c.odds_ratio, c.or_lower, c.or_upper);
    }
    Ok(())
}
