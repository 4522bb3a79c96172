//! Synthetic cohorts drawn from a known risk model.
//!
//! Baseline covariates roughly follow the marginals of a Swiss RRMS cohort
//! (age 42 ± 11, disease duration 11 ± 8 years, EDSS 2.4 ± 1.4, 69% female,
//! 94% on treatment, 5% with any Gd-enhancing lesion). Later cycles age the
//! patient by two years and let EDSS drift. Outcomes come from the logistic
//! mixed model with the supplied coefficients and random effects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{transform_and_center, CohortError, CohortTable, Covariates, CycleRecord, Gender};
use crate::inference::CompoundSymmetry;
use crate::pooling::PooledModel;
use crate::stats::{expit, logit};

/// Missing-at-random rates; missingness probability also depends on observed columns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissingnessRates {
    pub gd_lesions: f64,
    pub on_treatment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_patients: usize,
    /// Probabilities of a patient contributing 1, 2 or 3 cycles.
    pub cycle_counts: [f64; 3],
    pub missingness: MissingnessRates,
    /// Draw patient-level random effects from the model's σ and ρ.
    pub random_effects: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_patients: 935,
            // 324 / 405 / 206 patients with one, two and three cycles.
            cycle_counts: [324.0 / 935.0, 405.0 / 935.0, 206.0 / 935.0],
            missingness: MissingnessRates::default(),
            random_effects: true,
        }
    }
}

fn check_rate(name: &str, rate: f64) -> Result<(), CohortError> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(CohortError::Parameter(format!("{name} rate {rate} outside [0, 1]")))
    }
}

fn mar_missing(rng: &mut ChaCha8Rng, rate: f64, driver: f64) -> bool {
    if rate <= 0.0 {
        return false;
    }
    if rate >= 1.0 {
        return true;
    }
    rng.random::<f64>() < expit(logit(rate) + driver)
}

fn half_steps(x: f64, lo: f64, hi: f64) -> f64 {
    ((x * 2.0).round() / 2.0).clamp(lo, hi)
}

pub fn simulate_cohort(
    config: &SimulationConfig,
    true_model: &PooledModel,
    seed: u64,
) -> Result<CohortTable, CohortError> {
    check_rate("gd_lesions", config.missingness.gd_lesions)?;
    check_rate("on_treatment", config.missingness.on_treatment)?;
    let total: f64 = config.cycle_counts.iter().sum();
    if config.cycle_counts.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
        return Err(CohortError::Parameter("cycle_counts must be non-negative with positive sum".into()));
    }
    true_model
        .validate()
        .map_err(|e| CohortError::Parameter(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age0 = Normal::new(40.8, 11.3).expect("valid");
    let duration0 = Gamma::new(1.42, 6.96).expect("valid");
    let edss0 = Normal::new(2.3, 1.4).expect("valid");
    let edss_drift = Normal::new(0.1, 0.5).expect("valid");
    let extra_lesions = Poisson::new(1.0).expect("valid");
    let beta: Vec<f64> = std::iter::once(true_model.intercept.recalibrated)
        .chain(true_model.coefficient_array())
        .collect();
    let re = match (&true_model.random_effects, config.random_effects) {
        (Some(r), true) if r.sigma > 0.0 => Some(
            CompoundSymmetry::new(r.sigma, r.rho, beta.len())
                .map_err(|e| CohortError::Parameter(e.to_string()))?,
        ),
        _ => None,
    };

    let mut records = Vec::new();
    for i in 0..config.n_patients {
        let u = re.as_ref().map(|cs| {
            let z: Vec<f64> = (0..beta.len()).map(|_| rng.sample(StandardNormal)).collect();
            cs.apply_root(&z)
        });
        let roll = rng.random::<f64>() * total;
        let cycles = if roll < config.cycle_counts[0] {
            1
        } else if roll < config.cycle_counts[0] + config.cycle_counts[1] {
            2
        } else {
            3
        };
        let gender = if rng.random::<f64>() < 0.69 {
            Gender::Female
        } else {
            Gender::Male
        };
        let mut age: f64 = loop {
            let a = age0.sample(&mut rng);
            if (18.0..=70.0).contains(&a) {
                break a;
            }
        };
        let mut duration: f64 = Distribution::<f64>::sample(&duration0, &mut rng).min(37.0);
        let mut edss = half_steps(edss0.sample(&mut rng), 0.0, 7.0);
        let mut naive = rng.random::<f64>() < 0.2;

        for cycle in 1..=cycles {
            let gd = {
                let r = rng.random::<f64>();
                if r < 0.949 {
                    0
                } else if r < 0.975 {
                    1
                } else {
                    2 + extra_lesions.sample(&mut rng) as u32
                }
            };
            let prior = {
                let r = rng.random::<f64>();
                if r < 0.5 {
                    0
                } else if r < 0.8 {
                    1
                } else {
                    2 + (rng.random::<f64>() < 0.3) as u32
                }
            };
            let months = if prior > 0 {
                rng.random::<f64>() * 24.0
            } else {
                24.0 + rng.sample::<f64, _>(rand_distr::Exp1) * 36.0
            };
            let on_treatment = rng.random::<f64>() < 0.936;
            let cov = Covariates {
                age: (age * 10.0).round() / 10.0,
                disease_duration: (duration * 10.0).round() / 10.0,
                edss,
                gd_lesions: gd,
                prior_relapses: prior,
                months_since_last_relapse: months.round(),
                treatment_naive: naive,
                gender,
                on_treatment,
            };
            let x = transform_and_center(&cov, &true_model.centering)?;
            let mut lp = beta[0] + u.as_ref().map_or(0.0, |u| u[0]);
            for (k, xk) in x.values().iter().enumerate() {
                lp += (beta[k + 1] + u.as_ref().map_or(0.0, |u| u[k + 1])) * xk;
            }
            let relapse = rng.random::<f64>() < expit(lp);
            let gd_missing = mar_missing(
                &mut rng,
                config.missingness.gd_lesions,
                0.04 * (cov.age - 42.0) + 0.3 * (cycle as f64 - 1.5),
            );
            let tx_missing =
                mar_missing(&mut rng, config.missingness.on_treatment, 0.3 * (cov.edss - 2.4));
            records.push(CycleRecord {
                patient_id: format!("P{:05}", i + 1),
                cycle_index: cycle,
                relapse,
                age: cov.age,
                disease_duration: cov.disease_duration,
                edss: cov.edss,
                gd_lesions: (!gd_missing).then_some(gd),
                prior_relapses: prior,
                months_since_last_relapse: cov.months_since_last_relapse,
                treatment_naive: naive,
                gender,
                on_treatment: (!tx_missing).then_some(on_treatment),
                auxiliary: Vec::new(),
            });

            age += 2.0;
            duration += 2.0;
            edss = half_steps(edss + edss_drift.sample(&mut rng), 0.0, 9.5);
            naive = naive && !on_treatment;
        }
    }
    CohortTable::new(records, Vec::new())
}
