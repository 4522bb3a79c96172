//! Individual two-year relapse risk with per-factor contributions.
//!
//! cargo run --example predict_risk

use rrms_prognosis::cohort::{Covariates, Gender};
use rrms_prognosis::pooling::PooledModel;
use rrms_prognosis::risk::{predict_risk, round_risk, ProfileInput, ReferenceProfile};

fn main() -> anyhow::Result<()> {
    let model = PooledModel::published();
    let patient = Covariates {
        age: 29.0,
        disease_duration: 3.0,
        edss: 2.5,
        gd_lesions: 1,
        prior_relapses: 2,
        months_since_last_relapse: 4.0,
        treatment_naive: true,
        gender: Gender::Female,
        on_treatment: false,
    };
    let p = predict_risk(&patient.into(), &model)?;
    println!("risk {:.3} (logit {:.3})", round_risk(p.risk), p.linear_predictor);
    for c in &p.contributions {
        println!("  {:<32} value {:>7.3}  x {:>6.3} = {:>7.3}", c.factor, c.value, c.coefficient, c.contribution);
    }
    let reference = predict_risk(&ProfileInput::Reference(ReferenceProfile::Reference), &model)?;
    println!("reference profile risk {:.3}", round_risk(reference.risk));
    Ok(())
}
