//! Command-line front end: `fit`, `diagnose` and `simulate`.
//!
//! Exit codes: 0 success, 2 input error, 3 non-convergence, 4 numerical
//! failure. Settings come from flags, then the `--config` TOML file, then
//! defaults; the seed additionally falls back to `RESIDUUM_SEED`.

mod data;
mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::gof::{ks_uniform, replicated_sw, shapiro_wilk, SW_MAX_N};
use crate::regression::{fit, predictive_laws, Family, FittedModel};
use crate::residuals::{self, ResidualKind, ResidualSet};
use crate::simlab::{self, PowerStudyResult, Scenario};
use crate::special::std_normal_quantile;

pub use data::{parse_formula, Dataset};
pub use report::{Coefficient, DiagnosticReport, GofRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const SEED_ENV: &str = "RESIDUUM_SEED";
const DEFAULT_SEED: u64 = 1;
const DEFAULT_OUT: &str = "residuum-out";
const DEFAULT_REPLICATES: usize = 1000;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "residuum", version, about = "Randomized predictive p-value diagnostics for count regression")]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a count regression and write a report.
    Fit(ModelArgs),
    /// Fit, then compute residuals, goodness-of-fit tests and plot data.
    Diagnose(DiagnoseArgs),
    /// Run a Monte-Carlo type-I error / power study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Input CSV with a header row.
    pub data: Option<PathBuf>,
    /// poisson, negbin, zip or zinb.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub response: Option<String>,
    /// Comma-separated covariates of the count mean (intercept implied).
    #[arg(long)]
    pub mean_covariates: Option<String>,
    /// Comma-separated covariates of the zero-inflation logit (zip/zinb).
    #[arg(long)]
    pub zero_covariates: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Residual kinds (pearson, deviance, rpp, mpp, nrpp, nmpp).
    #[arg(long)]
    pub kinds: Option<String>,
    /// Number of NRPP randomizations for replicated Shapiro-Wilk (0 skips it).
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Threshold for the replicated Shapiro-Wilk summary.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// FinitePMF-NoCovariate, SinePoisson, NBQuadratic, NBvsPoissonDispersion or ZIPvsPoisson.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Comma-separated effect levels (defaults to the scenario's set).
    #[arg(long)]
    pub levels: Option<String>,
    /// Residual kinds to test (default nrpp,nmpp,pearson,deviance).
    #[arg(long)]
    pub kinds: Option<String>,
    /// Datasets per cell.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Significance level of each test.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings readable from the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: Option<PathBuf>,
    pub family: Option<String>,
    pub response: Option<String>,
    pub mean_covariates: Option<String>,
    pub zero_covariates: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub kinds: Option<String>,
    pub replicates: Option<usize>,
    pub alpha: Option<f64>,
    pub scenario: Option<String>,
    pub sizes: Option<String>,
    pub levels: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Input(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Input(format!("invalid {what} '{t}'"))))
        .collect()
}

fn parse_kinds(s: &str) -> Result<Vec<ResidualKind>> {
    let kinds: Vec<ResidualKind> =
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(Error::Input("no residual kinds given".into()));
    }
    Ok(kinds)
}

/// Fully resolved model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub data: PathBuf,
    pub family: Family,
    pub response: String,
    pub mean: Vec<String>,
    pub zero: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
}

impl ModelInputs {
    pub fn resolve(args: &ModelArgs, cfg: &Config) -> Result<Self> {
        let data =
            args.data.clone().or_else(|| cfg.data.clone()).ok_or_else(|| Error::Input("no input CSV given".into()))?;
        let family: Family = args.family.as_deref().or(cfg.family.as_deref()).unwrap_or("poisson").parse()?;
        if family == Family::Normal {
            return Err(Error::Input("family must be one of poisson, negbin, zip, zinb".into()));
        }
        let response = args
            .response
            .clone()
            .or_else(|| cfg.response.clone())
            .ok_or_else(|| Error::Input("--response is required".into()))?;
        let mean = parse_formula(args.mean_covariates.as_deref().or(cfg.mean_covariates.as_deref()).unwrap_or(""))?;
        let zero = parse_formula(args.zero_covariates.as_deref().or(cfg.zero_covariates.as_deref()).unwrap_or(""))?;
        let seed = resolve_seed(args.seed, cfg.seed)?;
        let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(ModelInputs { data, family, response, mean, zero, seed, out })
    }
}

struct Fitted {
    dataset: Dataset,
    spec: crate::regression::ModelSpec,
    model: FittedModel,
    report: DiagnosticReport,
}

fn fit_inputs(inputs: &ModelInputs) -> Result<Fitted> {
    let all: Vec<String> = inputs.mean.iter().chain(&inputs.zero).cloned().collect();
    let dataset = Dataset::load(&inputs.data, &inputs.response, &all)?;
    if dataset.dropped_rows > 0 {
        eprintln!("dropped {} rows with missing values", dataset.dropped_rows);
    }
    let spec = dataset.model_spec(inputs.family, &inputs.mean, &inputs.zero)?;
    let model = fit(&spec, &dataset.response)?;
    let mut report = DiagnosticReport::from_fit(
        &model,
        &inputs.response,
        &inputs.mean,
        &inputs.zero,
        dataset.dropped_rows,
        dataset.n(),
    );
    report.seed = Some(inputs.seed);
    Ok(Fitted { dataset, spec, model, report })
}

/// Fit the model and write the report bundle under `inputs.out`.
pub fn command_fit(inputs: &ModelInputs) -> Result<DiagnosticReport> {
    let mut f = fit_inputs(inputs)?;
    f.report.write_bundle(&inputs.out)?;
    Ok(f.report)
}

/// Normal plotting positions (i - 0.375) / (n + 0.25), i = 1..n.
pub fn qq_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (std_normal_quantile((i as f64 + 1.0 - 0.375) / (n + 0.25)).unwrap(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    pub kinds: Vec<ResidualKind>,
    pub replicates: usize,
    pub alpha: f64,
}

/// Fit, compute the requested residuals and tests, and write the report
/// bundle plus `residuals.csv` and one `qq_<kind>.csv` per real-valued kind.
/// A fit that did not converge is reported without residuals.
pub fn command_diagnose(inputs: &ModelInputs, opts: &DiagnoseOptions) -> Result<DiagnosticReport> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Input(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    let Fitted { dataset, spec, model, mut report } = fit_inputs(inputs)?;
    fs::create_dir_all(&inputs.out)?;
    if !model.converged {
        report.write_bundle(&inputs.out)?;
        return Ok(report);
    }
    let laws = predictive_laws(&model, &spec)?;
    let y = &dataset.response;
    let sets: Vec<ResidualSet> =
        opts.kinds.iter().map(|&k| residuals::compute(k, &laws, y, inputs.seed)).collect::<Result<_>>()?;

    let path = inputs.out.join("residuals.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["index".to_string(), "fitted_value".to_string()];
    header.extend(dataset.covariate_names.iter().cloned());
    header.extend(opts.kinds.iter().map(|k| k.name().to_string()));
    w.write_record(&header)?;
    for i in 0..y.len() {
        let mut row = vec![i.to_string(), laws[i].mean().to_string()];
        row.extend(dataset.covariates.iter().map(|c| c[i].to_string()));
        row.extend(sets.iter().map(|s| s.values[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    report.artifacts.push(path);

    let sw_ok = (3..=SW_MAX_N).contains(&y.len());
    for set in &sets {
        if set.kind.is_probability() {
            report.gof.push(GofRow::new(set.kind, &ks_uniform(&set.values)?));
            continue;
        }
        let path = inputs.out.join(format!("qq_{}.csv", set.kind.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["theoretical", "sample"])?;
        for (t, s) in qq_points(&set.values) {
            w.write_record([t.to_string(), s.to_string()])?;
        }
        w.flush()?;
        report.artifacts.push(path);
        if sw_ok {
            report.gof.push(GofRow::new(set.kind, &shapiro_wilk(&set.values)?));
        }
    }
    if !sw_ok {
        eprintln!("Shapiro-Wilk skipped: needs 3 <= n <= {SW_MAX_N}, have {}", y.len());
    }
    let find = |k| sets.iter().find(|s| s.kind == k);
    if let (Some(p), Some(d)) = (find(ResidualKind::Pearson), find(ResidualKind::Deviance)) {
        report.aggregate = Some(residuals::aggregate_stats(p, d)?);
    }
    if opts.replicates > 0 && sw_ok {
        report.replicated = Some(replicated_sw(&laws, y, opts.replicates, inputs.seed, opts.alpha)?);
    }
    report.write_bundle(&inputs.out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub scenario: Scenario,
    pub sizes: Vec<usize>,
    pub levels: Vec<f64>,
    pub kinds: Vec<ResidualKind>,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl SimulateOptions {
    pub fn resolve(args: &SimulateArgs, cfg: &Config) -> Result<Self> {
        let scenario: Scenario = args
            .scenario
            .as_deref()
            .or(cfg.scenario.as_deref())
            .ok_or_else(|| Error::Input("--scenario is required".into()))?
            .parse()?;
        let sizes = match args.sizes.as_deref().or(cfg.sizes.as_deref()) {
            Some(s) => parse_list(s, "sample size")?,
            None => simlab::DEFAULT_SIZES.to_vec(),
        };
        let levels = match args.levels.as_deref().or(cfg.levels.as_deref()) {
            Some(s) => parse_list(s, "effect level")?,
            None => scenario.levels().to_vec(),
        };
        let kinds = match args.kinds.as_deref().or(cfg.kinds.as_deref()) {
            Some(s) => parse_kinds(s)?,
            None => vec![ResidualKind::Nrpp, ResidualKind::Nmpp, ResidualKind::Pearson, ResidualKind::Deviance],
        };
        Ok(SimulateOptions {
            scenario,
            sizes,
            levels,
            kinds,
            reps: args.replicates.or(cfg.replicates).unwrap_or(simlab::DEFAULT_REPS),
            alpha: args.alpha.or(cfg.alpha).unwrap_or(simlab::DEFAULT_ALPHA),
            seed: resolve_seed(args.seed, cfg.seed)?,
            out: args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        })
    }
}

/// Run the grid and write `power.csv` and `cells.log` under `opts.out`.
pub fn command_simulate(opts: &SimulateOptions) -> Result<PowerStudyResult> {
    if opts.sizes.iter().any(|&n| n < 3) {
        return Err(Error::Input("sample sizes must be at least 3".into()));
    }
    let result =
        simlab::run_grid(opts.scenario, &opts.sizes, &opts.levels, &opts.kinds, opts.reps, opts.seed, opts.alpha)?;
    fs::create_dir_all(&opts.out)?;
    result.write_csv(fs::File::create(opts.out.join("power.csv"))?)?;
    let mut log = String::new();
    for r in &result.rows {
        log.push_str(&format!(
            "{} n={} level={} kind={} form={} rejection_rate={:.4} failures={}/{}{}\n",
            r.scenario,
            r.n,
            r.level,
            r.kind,
            r.model_form.name(),
            r.rejection_rate,
            r.failures,
            r.reps,
            if r.invalid { " INVALID" } else { "" }
        ));
    }
    fs::write(opts.out.join("cells.log"), log)?;
    Ok(result)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Fit(args) => {
            let inputs = ModelInputs::resolve(args, &cfg)?;
            let report = command_fit(&inputs)?;
            print!("{report}");
            Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Diagnose(args) => {
            let inputs = ModelInputs::resolve(&args.model, &cfg)?;
            let opts = DiagnoseOptions {
                kinds: match args.kinds.as_deref().or(cfg.kinds.as_deref()) {
                    Some(s) => parse_kinds(s)?,
                    None => ResidualKind::ALL.to_vec(),
                },
                replicates: args.replicates.or(cfg.replicates).unwrap_or(DEFAULT_REPLICATES),
                alpha: args.alpha.or(cfg.alpha).unwrap_or(simlab::DEFAULT_ALPHA),
            };
            let report = command_diagnose(&inputs, &opts)?;
            print!("{report}");
            Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Simulate(args) => {
            let opts = SimulateOptions::resolve(args, &cfg)?;
            let result = command_simulate(&opts)?;
            println!("wrote {} rows to {}", result.rows.len(), opts.out.join("power.csv").display());
            Ok(EXIT_OK)
        }
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
