//! Command-line front end for the barrier simulator.
//!
//! Every subcommand returns its stdout as a string so it can be tested
//! without spawning processes; diagnostics go to stderr in `main`.

pub mod config;
pub mod error;
pub mod grid;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nicsim_core::analytic::{builtin_params, fit_constants, predict_latency};
use nicsim_core::harness::{applicable_modes, compare_modes, execute, ResultRow, RESULT_CSV_HEADER};
use nicsim_core::schedule::{build_all, build_schedule, num_steps};
use nicsim_core::time::round2;
use nicsim_core::trace::trace_to_csv;
use nicsim_core::{AlgorithmKind, ExperimentConfig, Mode};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigLayer, SEED_ENV};
pub use crate::error::CliError;
use crate::plot::{render_svg, PlotOptions};

#[derive(Debug, Parser)]
#[command(name = "nicsim", version, about = "Simulate NIC-offloaded and host-based barriers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and print a CSV result row.
    Run(RunArgs),
    /// Run a grid of experiments (in parallel) and print CSV rows.
    Sweep(SweepArgs),
    /// Run every applicable mode on one configuration and print JSON.
    Compare(ExperimentArgs),
    /// Evaluate the closed-form latency model.
    Model(ModelArgs),
    /// Fit model constants to (n, latency) samples.
    Fit(FitArgs),
    /// Print barrier schedules as JSON.
    Schedule(ScheduleArgs),
    /// Render result CSV as an SVG latency-vs-nodes chart.
    Plot(PlotArgs),
}

/// Experiment settings. Flags override the config file; the seed falls back
/// to NICSIM_SEED, then 0.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// JSON config file (keys as the long flags, with underscores).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Platform preset [default: myrinet-lanai-xp].
    #[arg(long)]
    pub platform: Option<String>,
    /// host | nic-pt2pt | nic-collective | elan-chain [default: nic-collective].
    #[arg(long)]
    pub mode: Option<String>,
    /// ds | pe | gb | gb<degree> [default: ds].
    #[arg(long)]
    pub alg: Option<String>,
    /// Warm-up barriers excluded from statistics [default: 100].
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Measured barriers [default: 10000].
    #[arg(long)]
    pub iterations: Option<u64>,
    /// RNG seed [default: $NICSIM_SEED or 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-packet loss probability, overriding the preset.
    #[arg(long)]
    pub loss_prob: Option<f64>,
    /// Maximum random stagger of barrier entry, in µs [default: 0].
    #[arg(long)]
    pub host_skew_us: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Number of ranks [default: 8].
    #[arg(long)]
    pub n: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the packet trace CSV here.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Node counts: `2..1024:pow2`, `2..32`, `2..32:2` or `2,4,8`.
    #[arg(long, default_value = "2..64:pow2")]
    pub n: String,
    /// Comma-separated platforms [default: the --platform value].
    #[arg(long)]
    pub platforms: Option<String>,
    /// Comma-separated modes, or `all` for every mode the platform supports
    /// [default: the --mode value].
    #[arg(long)]
    pub modes: Option<String>,
    /// Comma-separated algorithms [default: the --alg value].
    #[arg(long)]
    pub algs: Option<String>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub platform: String,
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV with columns `n` and `latency_us` (or a result CSV with `mean_us`).
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub alg: String,
    #[arg(long)]
    pub n: usize,
    /// Only this rank [default: all ranks].
    #[arg(long)]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add the closed-form model prediction as a dashed series.
    #[arg(long)]
    pub model_overlay: bool,
    /// Omit the hardware-barrier reference line on Quadrics plots.
    #[arg(long)]
    pub no_reference: bool,
    #[arg(long)]
    pub title: Option<String>,
}

impl ExperimentArgs {
    fn layer(&self, n: Option<usize>) -> Result<ConfigLayer, CliError> {
        let file = match &self.config {
            Some(p) => config::load_layer(p)?,
            None => ConfigLayer::default(),
        };
        let flags = ConfigLayer {
            platform: self.platform.clone(),
            mode: self.mode.as_deref().map(str::parse::<Mode>).transpose()?,
            alg: self.alg.as_deref().map(str::parse::<AlgorithmKind>).transpose()?,
            n,
            warmup: self.warmup,
            iterations: self.iterations,
            seed: self.seed,
            loss_prob: self.loss_prob,
            host_skew_us: self.host_skew_us,
            trace: None,
            keep_series: None,
        };
        Ok(file.overlay(flags))
    }

    pub fn resolve(&self, n: Option<usize>) -> Result<ExperimentConfig, CliError> {
        self.layer(n)?.resolve(std::env::var(SEED_ENV).ok().as_deref())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(RESULT_CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Output of one subcommand: what goes to stdout.
pub fn execute_command(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => {
            let cfg = a.resolve(None)?;
            let cmp = compare_modes(&cfg)?;
            Ok(to_json(&CompareReport { config: &cfg, comparison: &cmp }))
        }
        Command::Model(a) => model(a),
        Command::Fit(a) => fit(a),
        Command::Schedule(a) => schedule(a),
        Command::Plot(a) => {
            let rows = read_rows(&a.input)?;
            let opts = PlotOptions {
                title: a.title.clone(),
                model_overlay: a.model_overlay,
                reference_line: if a.no_reference { Some(false) } else { None },
            };
            write_file(&a.out, &render_svg(&rows, &opts)?)?;
            Ok(String::new())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[derive(Serialize)]
struct CompareReport<'a> {
    config: &'a ExperimentConfig,
    comparison: &'a nicsim_core::harness::Comparison,
}

fn run(a: &RunArgs) -> Result<String, CliError> {
    let mut cfg = a.exp.resolve(a.n)?;
    cfg.trace = a.trace_out.is_some();
    let result = execute(&cfg)?;
    if let Some(p) = &a.trace_out {
        write_file(p, &trace_to_csv(&result.outcome.trace))?;
    }
    let csv = rows_to_csv(&[ResultRow::new(&cfg, &result.measurement)])?;
    match &a.out {
        Some(p) => write_file(p, &csv).map(|_| String::new()),
        None => Ok(csv),
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

/// Configurations of a sweep, in output order.
pub fn sweep_configs(a: &SweepArgs) -> Result<Vec<ExperimentConfig>, CliError> {
    let base = a.exp.layer(None)?;
    let ns = grid::parse_grid(&a.n)?;
    let platforms: Vec<String> = match &a.platforms {
        Some(p) => split_list(p).map(String::from).collect(),
        None => vec![base.platform.clone().unwrap_or_else(|| config::DEFAULT_PLATFORM.to_string())],
    };
    let algs: Vec<AlgorithmKind> = match &a.algs {
        Some(s) => split_list(s).map(str::parse).collect::<Result<_, _>>()?,
        None => vec![base.alg.unwrap_or(config::DEFAULT_ALG)],
    };
    let mut out = Vec::new();
    for platform in &platforms {
        let model = nicsim_core::topology::preset(platform)?;
        let modes: Vec<Mode> = match a.modes.as_deref() {
            Some("all") => applicable_modes(&model),
            Some(s) => split_list(s).map(str::parse).collect::<Result<_, _>>()?,
            None => vec![base.mode.unwrap_or(config::DEFAULT_MODE)],
        };
        for &mode in &modes {
            for &alg in &algs {
                for &n in &ns {
                    let top = ConfigLayer {
                        platform: Some(platform.clone()),
                        mode: Some(mode),
                        alg: Some(alg),
                        n: Some(n),
                        ..Default::default()
                    };
                    out.push(base.clone().overlay(top).resolve(std::env::var(SEED_ENV).ok().as_deref())?);
                }
            }
        }
    }
    Ok(out)
}

pub fn run_sweep(cfgs: &[ExperimentConfig]) -> Result<Vec<ResultRow>, CliError> {
    let mut rows: Vec<ResultRow> = cfgs
        .par_iter()
        .map(|c| execute(c).map(|r| ResultRow::new(c, &r.measurement)))
        .collect::<Result<_, _>>()?;
    rows.sort_by_key(ResultRow::sort_key);
    Ok(rows)
}

fn sweep(a: &SweepArgs) -> Result<String, CliError> {
    let rows = run_sweep(&sweep_configs(a)?)?;
    let csv = rows_to_csv(&rows)?;
    match &a.out {
        Some(p) => write_file(p, &csv).map(|_| String::new()),
        None => Ok(csv),
    }
}

#[derive(Debug, Serialize)]
pub struct ModelReport {
    pub platform: String,
    pub n: usize,
    pub t_init: f64,
    pub t_trig: f64,
    pub t_adj: f64,
    pub latency_us: f64,
    pub display: String,
}

pub fn model_report(platform: &str, n: usize) -> Result<ModelReport, CliError> {
    let p = builtin_params(platform)?;
    let latency = round2(predict_latency(&p, n)?);
    Ok(ModelReport {
        platform: platform.to_string(),
        n,
        t_init: p.t_init,
        t_trig: p.t_trig,
        t_adj: p.t_adj,
        latency_us: latency,
        display: format!("{latency:.2}µs"),
    })
}

fn model(a: &ModelArgs) -> Result<String, CliError> {
    Ok(to_json(&model_report(&a.platform, a.n)?))
}

/// Reads `(n, latency)` pairs from a CSV with an `n` column and a
/// `latency_us` or `mean_us` column.
pub fn read_samples(path: &Path) -> Result<Vec<(usize, f64)>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let n_col = col("n").ok_or_else(|| CliError::config(format!("{}: no `n` column", path.display())))?;
    let l_col = col("latency_us")
        .or_else(|| col("mean_us"))
        .ok_or_else(|| CliError::config(format!("{}: no `latency_us` or `mean_us` column", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let n = rec.get(n_col).and_then(|v| v.trim().parse().ok());
        let l = rec.get(l_col).and_then(|v| v.trim().parse().ok());
        match (n, l) {
            (Some(n), Some(l)) => out.push((n, l)),
            _ => return Err(CliError::config(format!("{}: line {line}: unparsable sample", path.display()))),
        }
    }
    Ok(out)
}

fn fit(a: &FitArgs) -> Result<String, CliError> {
    let samples = read_samples(&a.input)?;
    Ok(to_json(&fit_constants(&samples)?))
}

#[derive(Serialize)]
struct ScheduleReport {
    alg: AlgorithmKind,
    n: usize,
    num_steps: usize,
    schedules: Vec<nicsim_core::schedule::Schedule>,
}

fn schedule(a: &ScheduleArgs) -> Result<String, CliError> {
    let alg: AlgorithmKind = a.alg.parse()?;
    let schedules = match a.rank {
        Some(r) => vec![build_schedule(alg, a.n, r)?],
        None => build_all(alg, a.n)?,
    };
    Ok(to_json(&ScheduleReport { alg, n: a.n, num_steps: num_steps(alg, a.n), schedules }))
}
