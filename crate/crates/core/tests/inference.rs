use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rrms_prognosis::cohort::{simulate_cohort, SimulationConfig};
use rrms_prognosis::glm::{fit_logistic, Design, FitOptions, Penalty};
use rrms_prognosis::inference::{
    fit_design, fit_model, read_fit_manifest, write_fit, InferenceError, LambdaMode, LogPosterior, MixedData,
    ModelSpec, SamplerSettings, SMOOTHING_EPSILON,
};
use rrms_prognosis::pooling::PooledModel;
use rrms_prognosis::stats::expit;

fn data(seed: u64, n: usize, beta: &[f64]) -> MixedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (1..beta.len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let x = Design::with_intercept(&rows);
    let y = x.linear_predictor(beta).iter().map(|v| rng.random::<f64>() < expit(*v)).collect();
    let groups = (0..n).map(|i| i / 2).collect();
    let names = (1..beta.len()).map(|k| format!("x{k}")).collect();
    MixedData::new(x, y, groups, names).unwrap()
}

fn quick(lambda: LambdaMode, fixed_sigma: Option<f64>) -> ModelSpec {
    ModelSpec {
        lambda,
        fixed_sigma,
        sampler: SamplerSettings {
            chains: 2,
            iterations: 3000,
            burn_in: 1000,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn likelihood_ignores_row_order() {
    let d = data(1, 200, &[-0.5, 0.7, -0.4]);
    let spec = ModelSpec::default();
    let beta = [-0.3, 0.5, -0.2];
    let offsets: Vec<f64> = (0..200).map(|i| 0.01 * (i % 7) as f64).collect();
    let a = LogPosterior::new(&d, &spec).log_likelihood(&beta, &offsets);

    let order: Vec<usize> = (0..200).rev().collect();
    let rows: Vec<Vec<f64>> = order.iter().map(|r| d.design.row(*r)[1..].to_vec()).collect();
    let outcomes = order.iter().map(|r| d.outcomes[*r]).collect();
    let groups = order.iter().map(|r| 99 - d.groups[*r]).collect();
    let permuted = MixedData::new(Design::with_intercept(&rows), outcomes, groups, d.names.clone()).unwrap();
    let shuffled: Vec<f64> = order.iter().map(|r| offsets[*r]).collect();
    let b = LogPosterior::new(&permuted, &spec).log_likelihood(&beta, &shuffled);
    assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
}

#[test]
fn smoothed_gradient_matches_finite_differences() {
    let d = data(2, 300, &[-1.0, 0.4, 0.0, -0.6]);
    let spec = ModelSpec::default();
    let post = LogPosterior::new(&d, &spec);
    let offsets = vec![0.0; 300];
    for beta in [[0.1, -0.2, 0.3, 0.05], [-1.0, 0.4, 0.01, -0.6]] {
        let g = post.smoothed_beta_gradient(&beta, &offsets, 2.0);
        for k in 0..4 {
            let h = 1e-5;
            let (mut up, mut down) = (beta, beta);
            up[k] += h;
            down[k] -= h;
            let fd = (post.smoothed_beta_log_density(&up, &offsets, 2.0)
                - post.smoothed_beta_log_density(&down, &offsets, 2.0))
                / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-5 * fd.abs().max(1.0), "k={k}: {} vs {fd}", g[k]);
        }
    }
    assert!(SMOOTHING_EPSILON > 0.0);
}

#[test]
fn without_random_effects_posterior_mean_is_near_penalized_mode() {
    let d = data(3, 2000, &[-0.8, 0.6, -0.3, 0.0]);
    let spec = quick(LambdaMode::Fixed { value: 2.0 }, Some(0.0));
    let (draws, summary) = fit_design(&d, &spec).unwrap();
    assert!(draws.sigma.iter().flatten().all(|s| *s == 0.0));
    let map = fit_logistic(
        &d.design,
        &d.outcomes,
        &FitOptions {
            penalty: Penalty::Lasso {
                lambda: 2.0,
                epsilon: SMOOTHING_EPSILON,
            },
            intercept_prior_variance: Some(100.0),
            ..Default::default()
        },
    )
    .unwrap();
    for (p, m) in summary.parameters.iter().zip(&map.coefficients) {
        assert!((p.mean - m).abs() < 0.03, "{}: mean {} vs mode {m}", p.name, p.mean);
    }
}

#[test]
fn noise_predictors_shrink_and_intercept_recovers_base_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1600;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
    let d = MixedData::new(
        Design::with_intercept(&rows),
        y,
        (0..n).map(|i| i / 2).collect(),
        (1..=4).map(|k| format!("x{k}")).collect(),
    )
    .unwrap();
    let (_, s) = fit_design(&d, &quick(LambdaMode::Fixed { value: 20.0 }, Some(0.0))).unwrap();
    let b0 = s.get("intercept").unwrap().mean;
    assert!((b0 - (0.25f64 / 0.75).ln()).abs() < 0.05, "intercept {b0}");
    let mle = fit_logistic(&d.design, &d.outcomes, &FitOptions::default()).unwrap().coefficients;
    let shrunk: f64 = (1..=4).map(|k| s.get(&format!("x{k}")).unwrap().mean.abs()).sum();
    let free: f64 = mle[1..].iter().map(|b| b.abs()).sum();
    assert!(shrunk < 0.7 * free, "posterior {shrunk} vs unpenalized {free}");
}

#[test]
fn stronger_lambda_shrinks_more() {
    let d = data(5, 800, &[-0.5, 0.5, -0.4, 0.3]);
    let mut previous = f64::INFINITY;
    for lambda in [0.5, 10.0, 100.0] {
        let (_, s) = fit_design(&d, &quick(LambdaMode::Fixed { value: lambda }, Some(0.0))).unwrap();
        let l1: f64 = s.parameters[1..4].iter().map(|p| p.mean.abs()).sum();
        assert!(l1 < previous, "lambda {lambda}: {l1} >= {previous}");
        previous = l1;
    }
}

#[test]
fn fits_are_reproducible_and_seed_dependent() {
    let d = data(6, 300, &[-0.5, 0.5]);
    let spec = ModelSpec {
        sampler: SamplerSettings {
            chains: 2,
            iterations: 600,
            burn_in: 300,
            ..Default::default()
        },
        ..Default::default()
    };
    let (a, _) = fit_design(&d, &spec).unwrap();
    let (b, _) = fit_design(&d, &spec).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.beta[0], a.beta[1], "chains share a stream");
    let mut other = spec.clone();
    other.sampler.seed = 2;
    assert_ne!(fit_design(&d, &other).unwrap().0.beta, a.beta);
}

#[test]
fn invalid_specs_are_rejected() {
    let d = data(7, 50, &[0.0, 0.5]);
    let mut spec = ModelSpec::default();
    spec.sampler.burn_in = spec.sampler.iterations;
    assert!(matches!(fit_design(&d, &spec), Err(InferenceError::Domain(_))));
    let spec = ModelSpec {
        lambda: LambdaMode::Fixed { value: 0.0 },
        ..Default::default()
    };
    assert!(fit_design(&d, &spec).is_err());
    let spec = ModelSpec {
        fixed_sigma: Some(-1.0),
        ..Default::default()
    };
    assert!(fit_design(&d, &spec).is_err());
}

#[test]
fn cohort_fit_persists_and_reloads() {
    let config = SimulationConfig {
        n_patients: 150,
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 9).unwrap();
    let spec = ModelSpec {
        sampler: SamplerSettings {
            chains: 2,
            iterations: 400,
            burn_in: 200,
            ..Default::default()
        },
        ..Default::default()
    };
    let fit = fit_model(&table, &spec).unwrap();
    assert_eq!(fit.draws.coefficient_names.len(), 11);
    assert_eq!(fit.patients, 150);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_fit(dir.path(), &fit).unwrap();
    assert_eq!(read_fit_manifest(dir.path()).unwrap(), manifest);
    let draws = std::fs::read_to_string(dir.path().join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 1 + 2 * 200);
    let re = std::fs::read_to_string(dir.path().join("random_effects.csv")).unwrap();
    assert_eq!(re.lines().count(), 151);
    let moments = manifest.coefficient_moments().unwrap();
    assert_eq!(moments.len(), 11);
    assert!(moments.iter().all(|(_, v)| *v > 0.0));
}

#[test]
fn incomplete_cohort_must_be_imputed_first() {
    let config = SimulationConfig {
        n_patients: 60,
        missingness: rrms_prognosis::cohort::MissingnessRates {
            gd_lesions: 0.5,
            on_treatment: 0.0,
        },
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 2).unwrap();
    assert!(matches!(fit_model(&table, &ModelSpec::default()), Err(InferenceError::Data(_))));
}
