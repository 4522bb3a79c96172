use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rrms_prognosis::cohort::load_cohort;
use rrms_prognosis::pooling::PooledModel;
use serde_json::Value;

fn rrms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrms")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn samplesize_prints_three_criteria_and_epv() {
    let o = rrms(&[
        "samplesize", "--params", "22", "--r2cs", "0.09", "--prevalence", "0.172", "--events", "302",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("coefficient_shrinkage 2089"), "{text}");
    assert!(text.contains("optimism_in_fit 688"));
    assert!(text.contains("overall_risk 219"));
    assert!(text.contains("epv 13.7"));
}

#[test]
fn config_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = path(dir.path(), "config.json");
    fs::write(&config, r#"{"samplesize": {"params": 22, "r2cs": 0.09, "prevalence": 0.172, "margin": 0.1}}"#).unwrap();
    let o = rrms(&["samplesize", "--config", &config]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let from_config = stdout(&o);
    let o = rrms(&["--config", &config, "samplesize", "--margin", "0.05"]);
    let overridden = stdout(&o);
    assert!(overridden.contains("overall_risk 219"), "{overridden}");
    assert!(!from_config.contains("overall_risk 219"));
}

#[test]
fn seed_is_required_for_stochastic_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = rrms(&["simulate", "--out", &path(dir.path(), "c.csv")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn missing_input_exits_with_error() {
    let o = rrms(&["predict", "--profile", "/nonexistent/profile.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn predict_reference_profile() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "p.json");
    fs::write(&file, r#"{"profile": "reference"}"#).unwrap();
    let o = rrms(&["predict", "--profile", &file]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["risk"], 0.132);
    assert_eq!(v["linear_predictor"], -1.884);

    fs::write(&file, r#"{"age": 200, "gender": "F"}"#).unwrap();
    let o = rrms(&["predict", "--profile", &file]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("age"));
}

#[test]
fn simulate_recalibrate_score_and_gate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cohort = path(d, "cohort.csv");
    assert!(rrms(&["simulate", "--seed", "3", "--n-patients", "400", "--out", &cohort]).status.success());
    let table = load_cohort(fs::File::open(&cohort).unwrap()).unwrap();
    assert_eq!(table.patient_count(), 400);

    let model = path(d, "recal.json");
    let shipped = path(d, "shipped.json");
    PooledModel::published().save(Path::new(&shipped)).unwrap();
    assert!(rrms(&["recalibrate", "--model", &shipped, "--cohort", &cohort, "--out", &model]).status.success());
    let recal = PooledModel::load(Path::new(&model)).unwrap();
    assert_eq!(recal.coefficients, PooledModel::published().coefficients);

    let scores = path(d, "scores.csv");
    assert!(rrms(&["predict", "--model", &model, "--cohort", &cohort, "--out", &scores]).status.success());
    let text = fs::read_to_string(&scores).unwrap();
    assert!(text.starts_with("patient_id,cycle_index,predicted,outcome\n"));
    assert_eq!(text.lines().count(), table.len() + 1);

    let curve = path(d, "dca");
    let o = rrms(&["dca", "--predictions", &scores, "--start", "0.05", "--stop", "0.4", "--out", &curve]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&fs::read_to_string(Path::new(&curve).join("decision_curve.json")).unwrap()).unwrap();
    assert_eq!(summary["thresholds"].as_array().unwrap().len(), 36);
    assert!(summary["fraction_groups_in_range"].is_number());

    let report = path(d, "validation");
    let ok = rrms(&["validate", "--model", &model, "--cohort", &cohort, "--replicates", "50", "--out", &report]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let strict = rrms(&[
        "validate", "--model", &model, "--cohort", &cohort, "--replicates", "50", "--min-auc", "0.99", "--out", &report,
    ]);
    assert_eq!(strict.status.code(), Some(2));
    let v: Value = serde_json::from_str(&fs::read_to_string(Path::new(&report).join("validation.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], false);
}

#[test]
fn impute_fit_pool_on_small_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cohort = path(d, "cohort.csv");
    let imputed = path(d, "imputed");
    let fits = path(d, "fits");
    let model = path(d, "model.json");
    assert!(rrms(&["simulate", "--seed", "5", "--n-patients", "200", "--missing-gd", "0.3", "--out", &cohort])
        .status
        .success());
    let o = rrms(&[
        "impute", "--cohort", &cohort, "--seed", "1", "--imputations", "2", "--burn-in", "100", "--gap", "10", "--out", &imputed,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("targets: gd_any"));
    let o = rrms(&[
        "fit", "--imputed", &imputed, "--seed", "2", "--chains", "2", "--iterations", "600", "--burn-in", "300", "--out", &fits,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(&fits).join("fit_01/fit.json").exists());
    assert!(Path::new(&fits).join("fit_02/fit.json").exists());
    assert!(rrms(&["pool", "--fits", &fits, "--version", "small", "--out", &model]).status.success());
    let pooled = PooledModel::load(Path::new(&model)).unwrap();
    assert_eq!(pooled.version, "small");
    assert_eq!(pooled.coefficients.len(), 10);
}
