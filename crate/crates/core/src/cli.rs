//! `rrms` command line: one subcommand per pipeline step.
//!
//! Exit codes: 0 success, 1 error, 2 validation quality gate failed.
//!
//! A JSON file given with `--config` may hold defaults per subcommand,
//! e.g. `{"fit": {"chains": 4, "iterations": 12000}}`; flags on the command
//! line take precedence.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::cohort::{
    compute_epv, load_cohort, riley_sample_size, simulate_cohort, write_cohort, CenteringConstants, CohortTable,
    Epv, MissingnessRates, SimulationConfig, FACTOR_COUNT,
};
use crate::dca::{decision_curve, write_decision_curve, GridSpec};
use crate::imputation::{
    cohort_model, fit_and_impute, read_imputed_set, write_imputed_set, ImputationSettings,
};
use crate::inference::{fit_model, read_fit_manifest, write_fit, BetaProposal, LambdaMode, ModelSpec, SamplerSettings};
use crate::pooling::{from_fits, recalibrate_intercept, PooledModel};
use crate::risk::{predict_risk, round_risk};
use crate::service::{parse_profile, serve, PredictResponse, ServiceConfig};
use crate::stats::expit;
use crate::validation::{
    validate_model, write_report, ApparentBasis, BootstrapSettings, QualityGate, Resampling, ValidationSettings,
};

#[derive(Debug, Parser)]
#[command(name = "rrms", version, about = "Two-year relapse risk modelling pipeline for RRMS cohorts")]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON file with per-subcommand defaults; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic cohort from a risk model.
    Simulate(SimulateArgs),
    /// Multiply impute missing covariates.
    Impute(ImputeArgs),
    /// Fit the Bayesian mixed model to a cohort or to every imputed table.
    Fit(FitArgs),
    /// Pool fits by Rubin's rules into a model artifact.
    Pool(PoolArgs),
    /// Recalibrate a model's intercept to a cohort's prevalence.
    Recalibrate(RecalibrateArgs),
    /// Score a profile or a whole cohort.
    Predict(PredictArgs),
    /// Apparent and bootstrap optimism-corrected performance.
    Validate(ValidateArgs),
    /// Decision curve (net benefit over threshold probabilities).
    Dca(DcaArgs),
    /// Minimum sample sizes and events per variable.
    Samplesize(SampleSizeArgs),
    /// Serve the risk calculator API.
    Serve(ServeArgs),
}

/// A single cohort CSV or an imputed-set directory.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Complete cohort CSV.
    #[arg(long, value_name = "CSV")]
    pub cohort: Option<PathBuf>,
    /// Imputed-set directory (or its manifest).
    #[arg(long, value_name = "DIR")]
    pub imputed: Option<PathBuf>,
}

impl DataSource {
    fn tables(&self) -> Result<Vec<CohortTable>> {
        if let Some(p) = &self.cohort {
            let t = load_cohort(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)
                .with_context(|| format!("reading {}", p.display()))?;
            return Ok(vec![t]);
        }
        let p = self.imputed.as_ref().expect("clap enforces one source");
        Ok(read_imputed_set(p).with_context(|| format!("reading {}", p.display()))?.1)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 935)]
    pub n_patients: usize,
    /// Generating model; the shipped model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Missing-at-random rate of gd_lesions.
    #[arg(long, default_value_t = 0.0)]
    pub missing_gd: f64,
    /// Missing-at-random rate of on_treatment.
    #[arg(long, default_value_t = 0.0)]
    pub missing_treatment: f64,
    /// Omit patient-level random effects.
    #[arg(long)]
    pub no_random_effects: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub imputations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Iterations between retained imputations.
    #[arg(long, default_value_t = 100)]
    pub gap: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenteringSource {
    /// Means of the transformed factors, averaged over the input tables.
    Data,
    /// The shipped model's constants.
    Published,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Fix the Laplace rate instead of sampling it under a Gamma(1, 1) prior.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fix σ; 0 drops the random effects.
    #[arg(long)]
    pub fixed_sigma: Option<f64>,
    /// Use a random-walk proposal for the coefficients instead of Langevin.
    #[arg(long)]
    pub random_walk: bool,
    #[arg(long, value_enum, default_value_t = CenteringSource::Data)]
    pub centering: CenteringSource,
    /// Output directory; imputed input gets one `fit_NN` subdirectory per table.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Fit directories, or parents of `fit_NN` directories.
    #[arg(long, num_args = 1.., required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(long, default_value = "local_model")]
    pub version: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model artifact; the shipped model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON profile (object, `{"profile": ...}` or `"reference"`).
    #[arg(long, conflicts_with_all = ["cohort", "imputed"])]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub imputed: Option<PathBuf>,
    /// Output CSV for cohort scoring.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResamplingArg {
    Cycle,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Refit,
    Model,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long, default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ResamplingArg::Cycle)]
    pub resampling: ResamplingArg,
    /// Loess span of the calibration curve.
    #[arg(long, default_value_t = 0.75)]
    pub span: f64,
    #[arg(long, value_enum, default_value_t = BasisArg::Refit)]
    pub apparent_basis: BasisArg,
    /// Gate: corrected AUC must exceed this.
    #[arg(long, default_value_t = 0.5)]
    pub min_auc: f64,
    /// Gate: corrected calibration slope lower bound.
    #[arg(long, default_value_t = 0.5)]
    pub min_slope: f64,
    /// Gate: corrected calibration slope upper bound.
    #[arg(long, default_value_t = 1.5)]
    pub max_slope: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DcaArgs {
    /// CSV with `predicted,outcome` columns (an optional `patient_id` groups rows).
    #[arg(long, conflicts_with_all = ["model", "cohort", "imputed"])]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub imputed: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub start: f64,
    #[arg(long, default_value_t = 0.50)]
    pub stop: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleSizeArgs {
    /// Candidate predictor parameters (model degrees of freedom).
    #[arg(long)]
    pub params: u32,
    #[arg(long)]
    pub r2cs: f64,
    #[arg(long, default_value_t = 0.9)]
    pub shrinkage: f64,
    #[arg(long)]
    pub prevalence: f64,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Outcome events, for EPV.
    #[arg(long, conflicts_with = "cohort")]
    pub events: Option<usize>,
    /// Cohort CSV whose events give the EPV.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model artifact; the shipped model when omitted.
    #[arg(long, env = "RRMS_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "RRMS_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Allowed browser origin; repeatable, `*` for any.
    #[arg(long, env = "RRMS_CORS_ORIGIN", value_delimiter = ',')]
    pub cors_origin: Vec<String>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Outcome {
    pub code: u8,
}

const SUBCOMMANDS: [&str; 10] = [
    "simulate",
    "impute",
    "fit",
    "pool",
    "recalibrate",
    "predict",
    "validate",
    "dca",
    "samplesize",
    "serve",
];

/// Inserts config defaults for the chosen subcommand right after its name, so
/// that later (explicit) occurrences override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let Some(pos) = strs.iter().enumerate().skip(1).find_map(|(i, a)| {
        (SUBCOMMANDS.contains(&a.as_str()) && strs[i - 1] != "--config").then_some(i)
    }) else {
        return Ok(args);
    };
    let config: Value = serde_json::from_str(&fs::read_to_string(&path).with_context(|| format!("reading {path}"))?)
        .with_context(|| format!("parsing {path}"))?;
    let Some(section) = config.get(&strs[pos]) else { return Ok(args) };
    let section = section
        .as_object()
        .ok_or_else(|| anyhow!("config section `{}` must be an object", strs[pos]))?;
    let mut injected = Vec::new();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        let mut push = |v: &Value| -> Result<()> {
            match v {
                Value::Bool(true) => injected.push(flag.clone()),
                Value::Bool(false) | Value::Null => {}
                Value::String(s) => injected.extend([flag.clone(), s.clone()]),
                Value::Number(n) => injected.extend([flag.clone(), n.to_string()]),
                _ => bail!("config value for `{key}` must be a scalar or list of scalars"),
            }
            Ok(())
        };
        match value {
            Value::Array(items) => {
                for v in items {
                    push(v)?;
                }
            }
            v => push(v)?,
        }
    }
    let mut out: Vec<OsString> = args[..=pos].to_vec();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> ExitCode {
    let args = match expand_config(args.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(Outcome { code }) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn execute(command: Command) -> Result<Outcome> {
    let ok = Outcome { code: 0 };
    match command {
        Command::Simulate(a) => simulate(a).map(|_| ok),
        Command::Impute(a) => impute(a).map(|_| ok),
        Command::Fit(a) => fit(a).map(|_| ok),
        Command::Pool(a) => pool(a).map(|_| ok),
        Command::Recalibrate(a) => recalibrate(a).map(|_| ok),
        Command::Predict(a) => predict(a).map(|_| ok),
        Command::Validate(a) => validate(a),
        Command::Dca(a) => dca(a).map(|_| ok),
        Command::Samplesize(a) => samplesize(a).map(|_| ok),
        Command::Serve(a) => serve_cmd(a).map(|_| ok),
    }
}

fn load_model(path: Option<&Path>) -> Result<PooledModel> {
    match path {
        None => Ok(PooledModel::published()),
        Some(p) => PooledModel::load(p).with_context(|| format!("loading model {}", p.display())),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let model = load_model(a.model.as_deref())?;
    let config = SimulationConfig {
        n_patients: a.n_patients,
        missingness: MissingnessRates {
            gd_lesions: a.missing_gd,
            on_treatment: a.missing_treatment,
        },
        random_effects: !a.no_random_effects,
        ..Default::default()
    };
    let table = simulate_cohort(&config, &model, a.seed)?;
    write_cohort(&table, create(&a.out)?)?;
    println!(
        "{} rows, {} patients, prevalence {:.3} -> {}",
        table.len(),
        table.patient_count(),
        table.prevalence().unwrap_or(0.0),
        a.out.display()
    );
    Ok(())
}

fn impute(a: ImputeArgs) -> Result<()> {
    let table = DataSource {
        cohort: Some(a.cohort.clone()),
        imputed: None,
    }
    .tables()?
    .remove(0);
    let settings = ImputationSettings {
        imputations: a.imputations,
        burn_in: a.burn_in,
        gap: a.gap,
        chains: a.chains,
        seed: a.seed,
        prior_df: None,
    };
    let model = cohort_model(&table, settings);
    let set = fit_and_impute(&table, &model)?;
    let manifest = write_imputed_set(&a.out, &set)?;
    println!("targets: {}", if model.targets.is_empty() { "none".into() } else { model.targets.join(", ") });
    if let Some(d) = &manifest.diagnostics {
        println!(
            "max psrf {:.3}, min ess {:.0}: {}",
            d.max_psrf.unwrap_or(f64::NAN),
            d.min_ess,
            if d.passed { "converged" } else { "NOT converged" }
        );
    }
    println!("{} tables -> {}", manifest.files.len(), a.out.display());
    Ok(())
}

fn mean_centering(tables: &[CohortTable]) -> Result<CenteringConstants> {
    let mut sums = [0.0; FACTOR_COUNT];
    for t in tables {
        for (s, v) in sums.iter_mut().zip(t.factor_means()?.to_array()) {
            *s += v;
        }
    }
    Ok(CenteringConstants::from_array(sums.map(|s| s / tables.len() as f64)))
}

fn fit(a: FitArgs) -> Result<()> {
    let tables = a.data.tables()?;
    let centering = match a.centering {
        CenteringSource::Data => mean_centering(&tables)?,
        CenteringSource::Published => PooledModel::published().centering,
    };
    let lambda = match a.lambda {
        Some(value) => LambdaMode::Fixed { value },
        None => ModelSpec::default().lambda,
    };
    let imputed = a.data.imputed.is_some();
    for (k, table) in tables.iter().enumerate() {
        let spec = ModelSpec {
            lambda,
            fixed_sigma: a.fixed_sigma,
            sampler: SamplerSettings {
                chains: a.chains,
                iterations: a.iterations,
                burn_in: a.burn_in,
                thin: a.thin,
                seed: a.seed.wrapping_add(k as u64),
                beta_proposal: if a.random_walk {
                    BetaProposal::RandomWalk
                } else {
                    BetaProposal::Langevin
                },
            },
            centering: Some(centering),
            ..ModelSpec::default()
        };
        let fit = fit_model(table, &spec)?;
        let dir = if imputed { a.out.join(format!("fit_{:02}", k + 1)) } else { a.out.clone() };
        write_fit(&dir, &fit)?;
        let label = if imputed { format!("table {}", k + 1) } else { "cohort".into() };
        println!(
            "{label}: {} -> {}",
            if fit.summary.converged { "converged" } else { "NOT converged" },
            dir.display()
        );
        for w in &fit.summary.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}

fn fit_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_file() || p.join("fit.json").is_file() {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("fit.json").is_file())
            .collect();
        if subs.is_empty() {
            bail!("no fit found under {}", p.display());
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

fn pool(a: PoolArgs) -> Result<()> {
    let dirs = fit_dirs(&a.fits)?;
    let manifests = dirs
        .iter()
        .map(|d| read_fit_manifest(d).with_context(|| format!("reading fit {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let sources = dirs.iter().map(|d| d.display().to_string()).collect();
    let model = from_fits(&manifests, &a.version, sources)?;
    model.save(&a.out)?;
    println!("pooled {} fit(s) -> {}", manifests.len(), a.out.display());
    Ok(())
}

fn recalibrate(a: RecalibrateArgs) -> Result<()> {
    let model = load_model(Some(&a.model))?;
    let tables = a.data.tables()?;
    let out = recalibrate_intercept(&model, &tables)?;
    out.save(&a.out)?;
    println!(
        "intercept {:.6} -> {:.6} (offset {:+.6}) -> {}",
        out.intercept.pooled,
        out.intercept.recalibrated,
        out.intercept.calibration_offset,
        a.out.display()
    );
    Ok(())
}

fn optional_tables(cohort: &Option<PathBuf>, imputed: &Option<PathBuf>) -> Result<Option<Vec<CohortTable>>> {
    if cohort.is_none() && imputed.is_none() {
        return Ok(None);
    }
    if cohort.is_some() && imputed.is_some() {
        bail!("give either --cohort or --imputed, not both");
    }
    DataSource {
        cohort: cohort.clone(),
        imputed: imputed.clone(),
    }
    .tables()
    .map(Some)
}

/// Per-row risk averaged over the tables, with the shared outcomes.
fn average_risk(model: &PooledModel, tables: &[CohortTable]) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = tables[0].len();
    let mut risk = vec![0.0; n];
    for t in tables {
        if t.len() != n {
            bail!("imputed tables differ in row count");
        }
        for (r, lp) in risk.iter_mut().zip(model.linear_predictors(t)?) {
            *r += expit(lp) / tables.len() as f64;
        }
    }
    Ok((risk, tables[0].outcomes()))
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(a.model.as_deref())?;
    if let Some(path) = &a.profile {
        let raw: Value = serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let value = raw.get("profile").cloned().unwrap_or(raw);
        let profile = parse_profile(&value).map_err(|fields| {
            let list: Vec<String> = fields.iter().map(|(k, v)| format!("{k}: {v}")).collect();
            anyhow!("invalid profile: {}", list.join("; "))
        })?;
        let p = predict_risk(&profile, &model)?;
        let resp = PredictResponse {
            risk: round_risk(p.risk),
            linear_predictor: p.linear_predictor,
            contributions: p.contributions,
            warnings: p.warnings,
        };
        println!("{}", serde_json::to_string_pretty(&resp)?);
        return Ok(());
    }
    let tables = optional_tables(&a.cohort, &a.imputed)?
        .ok_or_else(|| anyhow!("give --profile, --cohort or --imputed"))?;
    let (risk, outcomes) = average_risk(&model, &tables)?;
    let out = a.out.as_ref().ok_or_else(|| anyhow!("cohort scoring needs --out"))?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["patient_id", "cycle_index", "predicted", "outcome"])?;
    for ((rec, p), y) in tables[0].records().iter().zip(&risk).zip(&outcomes) {
        w.write_record([
            rec.patient_id.clone(),
            rec.cycle_index.to_string(),
            p.to_string(),
            u8::from(*y).to_string(),
        ])?;
    }
    w.flush()?;
    println!("{} rows scored -> {}", risk.len(), out.display());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<Outcome> {
    let model = load_model(Some(&a.model))?;
    let tables = a.data.tables()?;
    let settings = ValidationSettings {
        bootstrap: BootstrapSettings {
            replicates: a.replicates,
            seed: a.seed,
            resampling: match a.resampling {
                ResamplingArg::Cycle => Resampling::Cycle,
                ResamplingArg::Patient => Resampling::Patient,
            },
            ..Default::default()
        },
        span: a.span,
        apparent_basis: match a.apparent_basis {
            BasisArg::Refit => ApparentBasis::Refit,
            BasisArg::Model => ApparentBasis::Model,
        },
        gate: QualityGate {
            min_corrected_auc: a.min_auc,
            slope_range: [a.min_slope, a.max_slope],
        },
    };
    let report = validate_model(&model, &tables, &settings)?;
    write_report(&a.out, &report)?;
    let m = &report.model_apparent;
    println!(
        "model AUC {:.3} [{:.3}, {:.3}], calibration slope {:.3}",
        m.auc.auc, m.auc.lower, m.auc.upper, m.calibration.slope
    );
    println!(
        "{}: optimism AUC {:.4}, slope {:.4}; corrected AUC {:.3}, slope {:.3}",
        report.optimism.label,
        report.optimism.optimism.auc,
        report.optimism.optimism.calibration_slope,
        report.corrected.auc,
        report.corrected.calibration_slope
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("report -> {}", a.out.display());
    Ok(Outcome {
        code: if report.passed { 0 } else { 2 },
    })
}

fn read_predictions(path: &Path) -> Result<(Vec<f64>, Vec<bool>, Option<Vec<usize>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let pi = col("predicted").ok_or_else(|| anyhow!("{} lacks a `predicted` column", path.display()))?;
    let oi = col("outcome").ok_or_else(|| anyhow!("{} lacks an `outcome` column", path.display()))?;
    let gi = col("patient_id");
    let (mut p, mut y, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        p.push(
            rec[pi]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("line {line}: bad predicted value"))?,
        );
        y.push(match rec[oi].trim() {
            "0" => false,
            "1" => true,
            other => bail!("line {line}: outcome must be 0 or 1, found `{other}`"),
        });
        if let Some(g) = gi {
            ids.push(rec[g].to_string());
        }
    }
    let groups = gi.map(|_| {
        let mut index = std::collections::BTreeMap::new();
        ids.iter()
            .map(|id| {
                let next = index.len();
                *index.entry(id.clone()).or_insert(next)
            })
            .collect()
    });
    Ok((p, y, groups))
}

fn dca(a: DcaArgs) -> Result<()> {
    let (predicted, outcomes, groups) = match &a.predictions {
        Some(p) => read_predictions(p)?,
        None => {
            let tables = optional_tables(&a.cohort, &a.imputed)?
                .ok_or_else(|| anyhow!("give --predictions, or --cohort/--imputed with an optional --model"))?;
            let model = load_model(a.model.as_deref())?;
            let (risk, y) = average_risk(&model, &tables)?;
            (risk, y, Some(tables[0].patient_groups().0))
        }
    };
    let grid = GridSpec {
        start: a.start,
        stop: a.stop,
        step: a.step,
    }
    .thresholds()?;
    let curve = decision_curve(&predicted, &outcomes, &grid, groups.as_deref())?;
    write_decision_curve(&a.out, &curve)?;
    match curve.useful_range {
        Some(r) => println!(
            "model beats both defaults for thresholds {:.2}-{:.2} ({:.1}% of rows in range)",
            r.lower,
            r.upper,
            100.0 * curve.fraction_rows_in_range
        ),
        None => println!("model never beats both default strategies on this grid"),
    }
    println!("decision curve -> {}", a.out.display());
    Ok(())
}

fn samplesize(a: SampleSizeArgs) -> Result<()> {
    let s = riley_sample_size(a.params, a.r2cs, a.shrinkage, a.prevalence, a.margin)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "coefficient_shrinkage {}", s.coefficient_shrinkage)?;
    writeln!(out, "optimism_in_fit {}", s.optimism_in_fit)?;
    writeln!(out, "overall_risk {}", s.overall_risk)?;
    writeln!(out, "minimum {}", s.minimum())?;
    let epv = match (&a.cohort, a.events) {
        (Some(p), _) => Some(compute_epv(
            &load_cohort(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
            a.params,
        )?),
        (None, Some(e)) => Some(Epv::from_events(e, a.params)?),
        (None, None) => None,
    };
    if let Some(e) = epv {
        writeln!(out, "epv {e}")?;
        if let Some(w) = &e.warning {
            writeln!(out, "warning: {w}")?;
        }
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        model: a.model,
        host: a.host,
        port: a.port,
        cors_origins: a.cors_origin,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(&config))?;
    Ok(())
}
