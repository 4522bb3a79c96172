//! Whole workflow in memory: simulate, impute, fit, pool, recalibrate, validate, decision curve.
//!
//! cargo run --release --example pipeline

use rrms_prognosis::cohort::{simulate_cohort, MissingnessRates, SimulationConfig};
use rrms_prognosis::dca::{decision_curve, GridSpec};
use rrms_prognosis::imputation::{cohort_model, fit_and_impute, ImputationSettings};
use rrms_prognosis::inference::{fit_model, FitManifest, ModelSpec, SamplerSettings};
use rrms_prognosis::pooling::{from_fits, recalibrate_intercept, PooledModel};
use rrms_prognosis::stats::expit;
use rrms_prognosis::validation::{validate_model, BootstrapSettings, ValidationSettings};

fn main() -> anyhow::Result<()> {
    let config = SimulationConfig {
        n_patients: 600,
        missingness: MissingnessRates {
            gd_lesions: 0.43,
            on_treatment: 0.05,
        },
        ..Default::default()
    };
    let cohort = simulate_cohort(&config, &PooledModel::published(), 100)?;
    println!("cohort: {} cycles, {} relapses", cohort.len(), cohort.events());

    let settings = ImputationSettings {
        imputations: 3,
        seed: 101,
        ..Default::default()
    };
    let imputed = fit_and_impute(&cohort, &cohort_model(&cohort, settings))?;

    let centering = imputed.tables[0].factor_means()?;
    let mut fits = Vec::new();
    for (k, t) in imputed.tables.iter().enumerate() {
        let spec = ModelSpec {
            sampler: SamplerSettings {
                chains: 2,
                iterations: 3000,
                burn_in: 1500,
                seed: 200 + k as u64,
                ..Default::default()
            },
            centering: Some(centering),
            ..Default::default()
        };
        fits.push(FitManifest::from_fit(&fit_model(t, &spec)?));
    }
    let model = recalibrate_intercept(&from_fits(&fits, "pipeline", Vec::new())?, &imputed.tables)?;
    println!("recalibrated intercept {:.3}", model.intercept.recalibrated);

    let validation = ValidationSettings {
        bootstrap: BootstrapSettings {
            replicates: 200,
            seed: 300,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = validate_model(&model, &imputed.tables, &validation)?;
    println!(
        "corrected AUC {:.3}, corrected slope {:.3}",
        report.corrected.auc, report.corrected.calibration_slope
    );

    let risk: Vec<f64> = model.linear_predictors(&imputed.tables[0])?.into_iter().map(expit).collect();
    let curve = decision_curve(&risk, &cohort.outcomes(), &GridSpec::default().thresholds()?, None)?;
    println!("useful threshold range {:?}", curve.useful_range);
    Ok(())
}
