use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rrms_prognosis::cohort::{simulate_cohort, MissingnessRates, SimulationConfig};
use rrms_prognosis::imputation::{
    cohort_model, fit_and_impute, imputation_diagnostics, impute_frame, read_imputed_set, write_imputed_set,
    Column, ColumnKind, ConvergenceThresholds, ImputationError, ImputationFrame, ImputationModel,
    ImputationSettings, Traces,
};
use rrms_prognosis::pooling::PooledModel;

fn quick(seed: u64) -> ImputationSettings {
    ImputationSettings {
        imputations: 10,
        burn_in: 300,
        gap: 30,
        seed,
        ..Default::default()
    }
}

/// Three complete predictors, a continuous and a binary target sharing a patient effect.
fn synthetic(seed: u64, patients: usize) -> (ImputationFrame, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    let (mut x1, mut x2, mut x3, mut y, mut t) = (vec![], vec![], vec![], vec![], vec![]);
    for g in 0..patients {
        let bg: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
        let cycles = 1 + g % 3;
        for _ in 0..cycles {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let c = f64::from(u8::from(rng.random::<f64>() < 0.4));
            let e: f64 = rng.sample(StandardNormal);
            groups.push(g);
            x1.push(a);
            x2.push(b);
            x3.push(c);
            y.push(2.0 + 1.5 * a - 0.8 * b + 0.5 * c + bg + e);
            // Latent sd sqrt(0.25 + 0.25 + 1) and Φ(−0.524) = 0.3.
            let latent = -0.524 * (1.5f64).sqrt() + 0.5 * a + bg + rng.sample::<f64, _>(StandardNormal);
            t.push(f64::from(u8::from(latent > 0.0)));
        }
    }
    let col = |name: &str, kind, v: &[f64]| Column {
        name: name.into(),
        kind,
        values: v.iter().map(|x| Some(*x)).collect(),
    };
    let frame = ImputationFrame {
        columns: vec![
            col("x1", ColumnKind::Continuous, &x1),
            col("x2", ColumnKind::Continuous, &x2),
            col("x3", ColumnKind::Binary, &x3),
            col("y", ColumnKind::Continuous, &y),
            col("t", ColumnKind::Binary, &t),
        ],
        groups,
    };
    (frame, y, t)
}

fn mask(frame: &mut ImputationFrame, column: &str, rate: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let col = frame.columns.iter_mut().find(|c| c.name == column).unwrap();
    let mut masked = Vec::new();
    for (r, v) in col.values.iter_mut().enumerate() {
        if rng.random::<f64>() < rate {
            *v = None;
            masked.push(r);
        }
    }
    masked
}

#[test]
fn complete_cohort_is_returned_unchanged() {
    let config = SimulationConfig {
        n_patients: 200,
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 3).unwrap();
    let model = cohort_model(&table, ImputationSettings::default());
    assert!(model.targets.is_empty());
    let set = fit_and_impute(&table, &model).unwrap();
    assert_eq!(set.tables.len(), 10);
    for t in &set.tables {
        assert_eq!(t, &table);
    }
    assert!(set.traces.is_empty());
}

#[test]
fn gd_missing_like_registry_is_completed_without_touching_observed() {
    let config = SimulationConfig {
        missingness: MissingnessRates {
            gd_lesions: 0.43,
            on_treatment: 0.05,
        },
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 8).unwrap();
    let frac = table.missing_report().fraction("gd_lesions").unwrap();
    assert!((frac - 0.43).abs() < 0.05, "missing fraction {frac}");
    let model = cohort_model(&table, quick(1));
    assert_eq!(model.targets, vec!["gd_any", "on_treatment"]);
    let set = fit_and_impute(&table, &model).unwrap();
    assert_eq!(set.tables.len(), 10);
    for t in &set.tables {
        assert!(t.is_complete());
        for (a, b) in t.records().iter().zip(table.records()) {
            if let Some(g) = b.gd_lesions {
                assert_eq!(a.gd_lesions, Some(g));
            }
            if let Some(o) = b.on_treatment {
                assert_eq!(a.on_treatment, Some(o));
            }
            assert_eq!(a.age.to_bits(), b.age.to_bits());
            assert_eq!(a.relapse, b.relapse);
        }
    }
    let differs = (0..table.len()).any(|r| {
        table.records()[r].gd_lesions.is_none()
            && set.tables.iter().any(|t| t.records()[r].gd_lesions != set.tables[0].records()[r].gd_lesions)
    });
    assert!(differs, "imputations never vary");
}

#[test]
fn mcar_binary_mean_recovered() {
    let (mut frame, _, t) = synthetic(21, 1500);
    let truth = t.iter().sum::<f64>() / t.len() as f64;
    assert!((truth - 0.3).abs() < 0.03, "generated mean {truth}");
    let masked = mask(&mut frame, "t", 0.3, 4);
    let model = ImputationModel::for_frame(&frame, quick(2));
    assert_eq!(model.targets, vec!["t"]);
    let imp = impute_frame(&frame, &model).unwrap();
    let mut total = 0.0;
    for draw in &imp.draws {
        total += masked.iter().map(|r| draw[0][*r]).sum::<f64>();
    }
    let imputed_mean = total / (masked.len() * imp.draws.len()) as f64;
    assert!((imputed_mean - 0.3).abs() < 0.05, "imputed mean {imputed_mean}");
}

#[test]
fn mcar_continuous_bias_small() {
    let (mut frame, y, _) = synthetic(22, 1500);
    let masked = mask(&mut frame, "y", 0.2, 5);
    let model = ImputationModel::for_frame(&frame, quick(3));
    let imp = impute_frame(&frame, &model).unwrap();
    let sd = rrms_prognosis::stats::variance(&y).sqrt();
    let mut err = 0.0;
    for draw in &imp.draws {
        err += masked.iter().map(|r| draw[0][*r] - y[*r]).sum::<f64>();
    }
    let bias = err / (masked.len() * imp.draws.len()) as f64;
    assert!(bias.abs() < 0.05 * sd, "bias {bias} vs sd {sd}");
    let completed = frame.completed(&imp, 0);
    for (r, v) in completed.column("y").unwrap().values.iter().enumerate() {
        let v = v.unwrap();
        if !masked.contains(&r) {
            assert_eq!(v.to_bits(), y[r].to_bits());
        }
    }
}

#[test]
fn joint_targets_and_determinism() {
    let (mut frame, _, _) = synthetic(23, 400);
    mask(&mut frame, "y", 0.2, 6);
    mask(&mut frame, "t", 0.2, 7);
    let settings = ImputationSettings {
        seed: 9,
        ..Default::default()
    };
    let model = ImputationModel::for_frame(&frame, settings);
    let a = impute_frame(&frame, &model).unwrap();
    let b = impute_frame(&frame, &model).unwrap();
    assert_eq!(a, b);
    assert!(a.traces.names.iter().any(|n| n == "sigma[t,y]"));
    assert!(!a.traces.names.iter().any(|n| n == "sigma[t,t]"));
    let diag = imputation_diagnostics(&a.traces, ConvergenceThresholds::default()).unwrap();
    assert_eq!(diag.parameters.len(), a.traces.names.len());
    assert!(diag.max_psrf.unwrap() < 1.1, "{diag:?}");
}

#[test]
fn multiple_chains_split_imputations() {
    let (mut frame, _, _) = synthetic(24, 300);
    mask(&mut frame, "y", 0.2, 6);
    let settings = ImputationSettings {
        chains: 3,
        ..quick(4)
    };
    let imp = impute_frame(&frame, &ImputationModel::for_frame(&frame, settings)).unwrap();
    assert_eq!(imp.draws.len(), 10);
    assert_eq!(imp.traces.chains.len(), 3);
    // Chains keep 4, 3, 3 draws; traces are cut to the shortest.
    assert_eq!(imp.traces.retained(), 90);
}

#[test]
fn invalid_models_rejected() {
    let (mut frame, _, _) = synthetic(25, 50);
    for v in &mut frame.columns[3].values {
        *v = None;
    }
    let model = ImputationModel::for_frame(&frame, quick(1));
    assert!(matches!(impute_frame(&frame, &model), Err(ImputationError::FullyMissing(c)) if c == "y"));

    let (frame, _, _) = synthetic(25, 50);
    let mut model = ImputationModel::for_frame(&frame, quick(1));
    model.targets.push("x1".into());
    assert!(matches!(impute_frame(&frame, &model), Err(ImputationError::Model(_))));

    let mut model = ImputationModel::for_frame(&frame, quick(1));
    model.settings.imputations = 1;
    assert!(matches!(impute_frame(&frame, &model), Err(ImputationError::Model(_))));

    let (mut frame, _, _) = synthetic(25, 50);
    mask(&mut frame, "x1", 0.2, 1);
    let mut model = ImputationModel::for_frame(&frame, quick(1));
    model.targets.retain(|t| t != "x1");
    model.predictors.push("x1".into());
    assert!(matches!(impute_frame(&frame, &model), Err(ImputationError::MissingPredictor(_))));
}

fn fake(chains: usize, n: usize, shift: f64, seed: u64) -> Traces {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Traces {
        names: vec!["p".into()],
        chains: (0..chains)
            .map(|c| vec![(0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift * c as f64).collect()])
            .collect(),
    }
}

#[test]
fn diagnostics_on_fake_traces() {
    let t = ConvergenceThresholds::default();
    let iid = imputation_diagnostics(&fake(4, 2000, 0.0, 1), t).unwrap();
    let r = iid.max_psrf.unwrap();
    assert!((0.99..=1.01).contains(&r), "psrf {r}");
    assert!(iid.passed);

    let apart = imputation_diagnostics(&fake(2, 500, 10.0, 2), t).unwrap();
    assert!(apart.max_psrf.unwrap() > 1.1);
    assert!(!apart.passed);

    let constant = Traces {
        names: vec!["c".into()],
        chains: vec![vec![vec![1.0; 200]]],
    };
    let d = imputation_diagnostics(&constant, t).unwrap();
    assert!(d.parameters[0].zero_variance);
    assert!(!d.passed);

    assert!(matches!(
        imputation_diagnostics(&fake(1, 49, 0.0, 3), t),
        Err(ImputationError::InsufficientTraces { needed: 50, found: 49 })
    ));
    assert!(imputation_diagnostics(&Traces::default(), t).is_err());
}

#[test]
fn persisted_set_round_trips() {
    let config = SimulationConfig {
        n_patients: 150,
        missingness: MissingnessRates {
            gd_lesions: 0.4,
            on_treatment: 0.1,
        },
        ..Default::default()
    };
    let table = simulate_cohort(&config, &PooledModel::published(), 12).unwrap();
    let settings = ImputationSettings {
        imputations: 3,
        burn_in: 100,
        gap: 20,
        ..Default::default()
    };
    let set = fit_and_impute(&table, &cohort_model(&table, settings)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_imputed_set(dir.path(), &set).unwrap();
    assert_eq!(manifest.files.len(), 3);
    assert!(dir.path().join("traces.csv").exists());
    let (back, tables) = read_imputed_set(dir.path()).unwrap();
    assert_eq!(back, manifest);
    assert_eq!(tables, set.tables);
}
