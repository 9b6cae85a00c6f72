//! `smart-cluster`: analysis, sample size and simulation for
//! cluster-randomized SMARTs.
//!
//! Exit codes: 0 success, 2 invalid input, 3 the data cannot support the
//! requested computation.

mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use smart_cluster::estimator::{dtr_means, parse_contrast, ContrastReport, FitReport};
use smart_cluster::power::{
    check_assumption2, conservative_cluster_size, detectable_effect_size, required_clusters, Rounding,
    SampleSizeInputs,
};
use smart_cluster::sim::{
    cell_moments, generate_trial, implied_cor2_raw, marginal_moments, mc_power, mixture_moments, preset, presets,
    McConfig, Scenario,
};
use smart_cluster::{
    embedded_dtrs, fit, read_dataset, validate, wald_test, write_dataset, DesignKind, EmbeddedDtr, FitOptions,
    MarginalMeanSpec,
};

use output::{num, Format, Table};

#[derive(Parser)]
#[command(name = "smart-cluster", version, about = "Design and analysis of cluster-randomized SMARTs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the weighted estimating equations to a trial CSV and test contrasts.
    Analyze(AnalyzeArgs),
    /// Number of clusters needed to detect an end-of-study regimen difference.
    Size(SizeArgs),
    /// Minimum detectable standardized effect for a given number of clusters.
    Mde(MdeArgs),
    /// Draw one trial from a scenario and write it as CSV.
    Simulate(SimulateArgs),
    /// Monte Carlo power of the Wald test under a scenario.
    Power(PowerArgs),
    /// Regimen-level mean, variance and ICC implied by a scenario.
    Moments(MomentsArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, value_parser = parse_design)]
    design: DesignKind,
    /// Trial CSV, one row per individual.
    #[arg(long)]
    data: PathBuf,
    /// Contrast to test, e.g. "(1,1)-vs-(-1,.)", "first-stage" or "0,2,1".
    /// Repeatable. Defaults to the first regimen against the last.
    #[arg(long)]
    contrast: Vec<String>,
    /// One working covariance shared by all regimens.
    #[arg(long)]
    shared_cov: bool,
    /// Working-covariance updates after the initial identity fit.
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fit even when some design cell has no clusters.
    #[arg(long)]
    allow_empty_cells: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DesignParams {
    #[arg(long, value_parser = parse_design)]
    design: DesignKind,
    /// Common cluster size.
    #[arg(long, required_unless_present = "cluster_sizes", conflicts_with = "cluster_sizes")]
    m: Option<u32>,
    /// Unequal cluster sizes; the smallest is used.
    #[arg(long, value_delimiter = ',')]
    cluster_sizes: Option<Vec<u32>>,
    /// Intra-cluster correlation (conditional on the covariate when --cor2 is given).
    #[arg(long)]
    rho: f64,
    /// Response probability after first-stage treatment 1.
    #[arg(long)]
    p1: f64,
    /// Response probability after first-stage treatment -1 (prototypical design).
    #[arg(long)]
    p_neg1: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    power: f64,
    /// Squared correlation between outcome and a cluster-level covariate.
    #[arg(long)]
    cor2: Option<f64>,
    #[arg(long, default_value = "nearest", value_parser = parse_rounding)]
    rounding: Rounding,
}

#[derive(Args)]
struct SizeArgs {
    #[command(flatten)]
    params: DesignParams,
    /// Standardized effect size.
    #[arg(long)]
    delta: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct MdeArgs {
    #[command(flatten)]
    params: DesignParams,
    /// Number of clusters.
    #[arg(long)]
    n: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Built-in scenario name, e.g. table3-row1.
    #[arg(long)]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Number of clusters (default: the preset's).
    #[arg(long)]
    n: Option<usize>,
    /// Cluster size (default: the preset's).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Contrast to test; defaults to the first regimen against the last.
    #[arg(long)]
    contrast: Option<String>,
    /// Shift cell means so that every regimen has the same mean.
    #[arg(long)]
    null: bool,
    #[arg(long)]
    shared_cov: bool,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Only this regimen, e.g. "(1,1)".
    #[arg(long)]
    dtr: Option<String>,
    #[command(flatten)]
    out: OutputArgs,
}

fn parse_design(s: &str) -> Result<DesignKind, String> {
    s.parse().map_err(|e: smart_cluster::Error| e.to_string())
}

fn parse_rounding(s: &str) -> Result<Rounding, String> {
    s.parse().map_err(|e: smart_cluster::Error| e.to_string())
}

enum CliError {
    Input(String),
    Compute(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl From<smart_cluster::Error> for CliError {
    fn from(e: smart_cluster::Error) -> Self {
        if e.is_computation() {
            CliError::Compute(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::Size(a) => run_size(a),
        Command::Mde(a) => run_mde(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Power(a) => run_power(a),
        Command::Moments(a) => run_moments(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Input(_) => 2,
                CliError::Compute(_) => 3,
            })
        }
    }
}

fn emit(out: &OutputArgs, json: impl FnOnce() -> CliResult<Value>, table: impl FnOnce() -> Table) -> CliResult<()> {
    let mut sink = output::sink(out.output.as_deref())?;
    match out.format {
        Format::Json => output::write_json(&mut sink, &json()?)?,
        Format::Csv => output::write_table(&mut sink, &table())?,
    }
    Ok(())
}

fn default_contrast(design: DesignKind) -> String {
    let dtrs = embedded_dtrs(design);
    format!("{}-vs-{}", dtrs[0], dtrs[dtrs.len() - 1])
}

fn run_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data, a.design)?;
    let report = validate(&ds);
    let spec = MarginalMeanSpec::for_dataset(&ds);
    let labels = if a.contrast.is_empty() {
        vec![default_contrast(a.design)]
    } else {
        a.contrast.clone()
    };
    // parse contrasts up front so a typo fails before any fitting
    let vectors = labels
        .iter()
        .map(|l| parse_contrast(&spec, l))
        .collect::<Result<Vec<_>, _>>()?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Input(format!("alpha {} outside (0, 1)", a.alpha)));
    }
    let options = FitOptions {
        shared_cov: a.shared_cov,
        iterations: a.iterations,
        require_all_cells: !a.allow_empty_cells,
    };
    let f = fit(&ds, &spec, &options)?;
    let contrasts = labels
        .into_iter()
        .zip(&vectors)
        .map(|(label, c)| Ok(ContrastReport { label, result: wald_test(&f, c, a.alpha)? }))
        .collect::<CliResult<Vec<_>>>()?;
    let means = dtr_means(&f, None)?;
    let fit_report = FitReport::new(&f, contrasts);

    emit(
        &a.out,
        || {
            let mut v = serde_json::to_value(&fit_report)?;
            v["dtr_means"] = serde_json::to_value(&means)?;
            v["validation"] = serde_json::to_value(&report)?;
            Ok(v)
        },
        || {
            let mut t = Table::new(vec!["contrast", "estimate", "se", "z", "p", "alpha", "reject"]);
            for c in &fit_report.contrasts {
                let r = &c.result;
                t.push(vec![
                    c.label.clone(),
                    num(r.estimate),
                    num(r.std_error),
                    num(r.z),
                    num(r.p_value),
                    num(r.alpha),
                    r.reject.to_string(),
                ]);
            }
            t
        },
    )
}

fn inputs(p: &DesignParams, delta: f64) -> CliResult<SampleSizeInputs> {
    let m = match (&p.cluster_sizes, p.m) {
        (Some(sizes), _) => conservative_cluster_size(sizes)?,
        (None, Some(m)) => m,
        (None, None) => return Err(CliError::Input("--m or --cluster-sizes is required".into())),
    };
    let p_neg1 = match (p.design, p.p_neg1) {
        (DesignKind::Prototypical, None) => {
            return Err(CliError::Input("--p-neg1 is required for the prototypical design".into()))
        }
        (_, v) => v.unwrap_or(1.0),
    };
    Ok(SampleSizeInputs {
        design: p.design,
        m,
        delta,
        rho: p.rho,
        p1: p.p1,
        p_neg1,
        alpha: p.alpha,
        power: p.power,
        cor2_yx: p.cor2,
        rounding: p.rounding,
    })
}

fn run_size(a: SizeArgs) -> CliResult<()> {
    let inp = inputs(&a.params, a.delta)?;
    let res = required_clusters(&inp)?;
    emit(
        &a.out,
        || Ok(output::versioned(&res)?),
        || {
            let mut t = Table::new(vec!["n", "n_exact", "formula", "base", "vif", "rerand", "cov_reduction"]);
            let tm = res.terms;
            t.push(vec![
                res.n.to_string(),
                num(res.n_exact),
                res.formula.clone(),
                num(tm.base),
                num(tm.vif),
                num(tm.rerand),
                num(tm.cov_reduction),
            ]);
            t
        },
    )
}

#[derive(Serialize)]
struct MdeReport {
    n: u64,
    m: u32,
    delta: f64,
    alpha: f64,
    power: f64,
}

fn run_mde(a: MdeArgs) -> CliResult<()> {
    let inp = inputs(&a.params, 1.0)?;
    let delta = detectable_effect_size(&inp, a.n)?;
    let rep = MdeReport {
        n: a.n,
        m: inp.m,
        delta,
        alpha: inp.alpha,
        power: inp.power,
    };
    emit(
        &a.out,
        || Ok(output::versioned(&rep)?),
        || {
            let mut t = Table::new(vec!["n", "m", "delta", "alpha", "power"]);
            t.push(vec![rep.n.to_string(), rep.m.to_string(), num(delta), num(rep.alpha), num(rep.power)]);
            t
        },
    )
}

struct Loaded {
    name: String,
    scenario: Scenario,
    n: Option<usize>,
    m: Option<usize>,
}

fn load_scenario(src: &ScenarioSource) -> CliResult<Loaded> {
    if let Some(name) = &src.preset {
        let p = preset(name).map_err(|_| {
            let names: Vec<String> = presets().into_iter().map(|p| p.name).collect();
            CliError::Input(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })?;
        return Ok(Loaded {
            name: p.name,
            scenario: p.scenario,
            n: Some(p.n as usize),
            m: Some(p.m as usize),
        });
    }
    let path = src.scenario.as_deref().expect("clap enforces one source");
    let scenario = Scenario::load(path)?;
    Ok(Loaded {
        name: scenario.name.clone().unwrap_or_else(|| display_name(path)),
        scenario,
        n: None,
        m: None,
    })
}

fn display_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn size_arg(given: Option<usize>, default: Option<usize>, flag: &str) -> CliResult<usize> {
    given
        .or(default)
        .ok_or_else(|| CliError::Input(format!("--{flag} is required with --scenario")))
}

fn run_simulate(a: SimulateArgs) -> CliResult<()> {
    let l = load_scenario(&a.source)?;
    let n = size_arg(a.n, l.n, "n")?;
    let m = size_arg(a.m, l.m, "m")?;
    let ds = generate_trial(&l.scenario, n, m, a.seed)?;
    let mut sink = output::sink(a.output.as_deref())?;
    write_dataset(&ds, &mut sink)?;
    sink.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PowerReport<'a> {
    scenario: &'a str,
    n: usize,
    m: usize,
    alpha: f64,
    seed: u64,
    contrast: &'a str,
    c: &'a [f64],
    #[serde(flatten)]
    estimate: &'a smart_cluster::sim::PowerEstimate,
}

fn run_power(a: PowerArgs) -> CliResult<()> {
    let l = load_scenario(&a.source)?;
    let n = size_arg(a.n, l.n, "n")?;
    let m = size_arg(a.m, l.m, "m")?;
    let (scenario, name) = if a.null {
        (l.scenario.equalize_means()?, format!("{}-null", l.name))
    } else {
        (l.scenario, l.name)
    };
    let spec = MarginalMeanSpec::new(scenario.design, usize::from(scenario.covariate));
    let label = a.contrast.clone().unwrap_or_else(|| default_contrast(scenario.design));
    let c = parse_contrast(&spec, &label)?;
    let config = McConfig {
        n,
        m,
        reps: a.reps,
        alpha: a.alpha,
        master_seed: a.seed,
    };
    let options = FitOptions {
        shared_cov: a.shared_cov,
        iterations: a.iterations,
        require_all_cells: false,
    };
    let est = mc_power(&scenario, &c, &config, &options)?;
    let rep = PowerReport {
        scenario: &name,
        n,
        m,
        alpha: a.alpha,
        seed: a.seed,
        contrast: &label,
        c: &c,
        estimate: &est,
    };
    emit(
        &a.out,
        || Ok(output::versioned(&rep)?),
        || {
            let mut t = Table::new(vec!["scenario", "n", "m", "reps", "power", "mc_se", "rejections", "failures"]);
            t.push(vec![
                name.clone(),
                n.to_string(),
                m.to_string(),
                est.reps.to_string(),
                num(est.power),
                num(est.mc_se),
                est.rejections.to_string(),
                est.failures.to_string(),
            ]);
            t
        },
    )
}

#[derive(Serialize)]
struct DtrMoments {
    dtr: String,
    mean: f64,
    variance: f64,
    icc: f64,
    /// Moments given the covariate, for covariate scenarios.
    #[serde(skip_serializing_if = "Option::is_none")]
    conditional: Option<smart_cluster::sim::MarginalMoments>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cor2: Option<f64>,
    cells: smart_cluster::power::CellMoments,
    assumption2: smart_cluster::power::Assumption2Check,
}

#[derive(Serialize)]
struct MomentsReport {
    scenario: String,
    design: DesignKind,
    dtrs: Vec<DtrMoments>,
}

fn run_moments(a: MomentsArgs) -> CliResult<()> {
    let l = load_scenario(&a.source)?;
    let s = &l.scenario;
    s.validate()?;
    let dtrs = match &a.dtr {
        Some(label) => vec![EmbeddedDtr::parse(s.design, label)?],
        None => embedded_dtrs(s.design),
    };
    let rows = dtrs
        .iter()
        .map(|d| {
            let total = marginal_moments(s, d)?;
            let cond = mixture_moments(s, d)?;
            let cells = cell_moments(s, d)?;
            Ok(DtrMoments {
                dtr: d.to_string(),
                mean: total.mean,
                variance: total.variance,
                icc: total.icc,
                conditional: s.covariate.then_some(cond),
                cor2: s.covariate.then(|| implied_cor2_raw(&cond, s)),
                cells,
                assumption2: check_assumption2(&cells),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rep = MomentsReport {
        scenario: l.name,
        design: s.design,
        dtrs: rows,
    };
    emit(
        &a.out,
        || Ok(output::versioned(&rep)?),
        || {
            let mut t = Table::new(vec!["dtr", "mean", "variance", "icc", "assumption2"]);
            for d in &rep.dtrs {
                t.push(vec![
                    d.dtr.clone(),
                    num(d.mean),
                    num(d.variance),
                    num(d.icc),
                    d.assumption2.holds.to_string(),
                ]);
            }
            t
        },
    )
}
