//! Measurement methodology on top of the simulator: warm-up, averaging over
//! consecutive barriers, placement randomization and mode comparison.

use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_EVENT_BUDGET;
use crate::error::{ConfigError, SimError};
use crate::rng::{SimRng, PLACEMENT_STREAM};
use crate::schedule::{num_steps, AlgorithmKind};
use crate::sim::{simulate, Mode, SimConfig, SimOutcome};
use crate::time::SimTime;
use crate::topology::{permute_placement, preset, CostModel};
use crate::trace::PacketCounts;

pub const DEFAULT_WARMUP: u64 = 100;
pub const DEFAULT_ITERATIONS: u64 = 10_000;

fn default_warmup() -> u64 {
    DEFAULT_WARMUP
}

fn default_iterations() -> u64 {
    DEFAULT_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub platform: String,
    pub mode: Mode,
    pub alg: AlgorithmKind,
    pub n: usize,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the preset's loss probability.
    #[serde(default)]
    pub loss_prob: Option<f64>,
    /// Maximum random stagger of each barrier entry, in µs.
    #[serde(default)]
    pub host_skew_us: f64,
    #[serde(default)]
    pub trace: bool,
    /// Keep the per-iteration latency series in the measurement.
    #[serde(default)]
    pub keep_series: bool,
}

impl ExperimentConfig {
    pub fn new(platform: &str, mode: Mode, alg: AlgorithmKind, n: usize) -> Self {
        ExperimentConfig {
            platform: platform.to_string(),
            mode,
            alg,
            n,
            warmup: DEFAULT_WARMUP,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            loss_prob: None,
            host_skew_us: 0.0,
            trace: false,
            keep_series: false,
        }
    }

    /// Resolves the preset and applies overrides.
    pub fn cost_model(&self) -> Result<CostModel, ConfigError> {
        let mut m = preset(&self.platform)?;
        if let Some(p) = self.loss_prob {
            m.set_loss_prob(p)?;
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations < 1 {
            return Err(ConfigError::invalid("iterations", "must be >= 1"));
        }
        if self.n < 1 {
            return Err(ConfigError::invalid("n", "must be >= 1"));
        }
        if !(self.host_skew_us.is_finite() && self.host_skew_us >= 0.0) {
            return Err(ConfigError::invalid("host_skew_us", "must be a finite value >= 0"));
        }
        self.warmup.checked_add(self.iterations).ok_or_else(|| ConfigError::invalid("iterations", "too large"))?;
        Ok(())
    }

    /// Simulator configuration for this experiment under `model`.
    pub fn sim_config(&self, model: CostModel) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        let host_skew = SimTime::from_micros_f64(self.host_skew_us)
            .ok_or_else(|| ConfigError::invalid("host_skew_us", "out of range"))?;
        let leaf_ports = model.leaf_ports;
        let mut rng = SimRng::for_entity(self.seed, PLACEMENT_STREAM);
        let mut cfg = SimConfig::new(model, self.mode, self.alg, self.n);
        cfg.placement = permute_placement(self.n, &mut rng).with_leaf_ports(leaf_ports);
        cfg.barriers = self.warmup + self.iterations;
        cfg.seed = self.seed;
        cfg.host_skew = host_skew;
        cfg.trace = self.trace;
        cfg.event_budget = event_budget(self.alg, self.n, cfg.barriers);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The engine's livelock budget, raised for runs that legitimately need
/// more events: 64 events per rank per step per barrier.
pub fn event_budget(alg: AlgorithmKind, n: usize, barriers: u64) -> u64 {
    let steps = num_steps(alg, n).max(1) as u64;
    (n as u64).saturating_mul(steps).saturating_mul(barriers).saturating_mul(64).max(DEFAULT_EVENT_BUDGET)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub mean_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    /// Packets over the whole run, warm-up included.
    pub counts: PacketCounts,
    pub retransmits: u64,
    pub series_us: Option<Vec<f64>>,
}

/// A measurement together with the raw simulation result.
#[derive(Debug, Clone)]
pub struct Run {
    pub measurement: Measurement,
    pub outcome: SimOutcome,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Measurement, SimError> {
    execute(cfg).map(|r| r.measurement)
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Run, SimError> {
    execute_with_model(cfg, cfg.cost_model()?)
}

/// Like [`execute`] but with an explicit cost model instead of the preset.
pub fn execute_with_model(cfg: &ExperimentConfig, model: CostModel) -> Result<Run, SimError> {
    let sim = cfg.sim_config(model)?;
    let outcome = simulate(&sim)?;
    let g = &outcome.groups[0];
    if !g.completed_all() {
        return Err(SimError::Contract("simulation went idle before every barrier completed".into()));
    }
    let n = g.n as u128;
    let measured = &g.latency_sum_ns[cfg.warmup as usize..];
    let total: u128 = measured.iter().map(|&s| s as u128).sum();
    let mean_us = total as f64 / (n * measured.len() as u128) as f64 / 1000.0;
    let series: Vec<f64> = measured.iter().map(|&s| s as f64 / n as f64 / 1000.0).collect();
    let mut sorted = series.clone();
    sorted.sort_by(f64::total_cmp);
    let measurement = Measurement {
        mean_us,
        min_us: sorted[0],
        max_us: sorted[sorted.len() - 1],
        p50_us: percentile(&sorted, 50.0),
        p99_us: percentile(&sorted, 99.0),
        counts: outcome.counts.clone(),
        retransmits: outcome.counts.retransmits,
        series_us: cfg.keep_series.then_some(series),
    };
    Ok(Run { measurement, outcome })
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub results: Vec<ModeResult>,
    pub host_over_pt2pt: f64,
    pub host_over_collective: f64,
}

impl Comparison {
    pub fn mean(&self, mode: Mode) -> Option<f64> {
        self.results.iter().find(|r| r.mode == mode).map(|r| r.measurement.mean_us)
    }
}

/// Modes that can run on `model`.
pub fn applicable_modes(model: &CostModel) -> Vec<Mode> {
    Mode::ALL
        .into_iter()
        .filter(|&m| m != Mode::ElanChain || (model.reliable_network && model.loss_prob == 0.0))
        .collect()
}

/// Runs every applicable mode of `base` on the shared seed.
pub fn compare_modes(base: &ExperimentConfig) -> Result<Comparison, SimError> {
    compare_modes_with_model(base, base.cost_model()?)
}

pub fn compare_modes_with_model(base: &ExperimentConfig, model: CostModel) -> Result<Comparison, SimError> {
    let mut results = Vec::new();
    for mode in applicable_modes(&model) {
        let cfg = ExperimentConfig { mode, ..base.clone() };
        let measurement = execute_with_model(&cfg, model.clone())?.measurement;
        results.push(ModeResult { mode, measurement });
    }
    let mean = |m: Mode| results.iter().find(|r| r.mode == m).map(|r| r.measurement.mean_us).unwrap_or(f64::NAN);
    let host_over_pt2pt = mean(Mode::Host) / mean(Mode::NicPt2pt);
    let host_over_collective = mean(Mode::Host) / mean(Mode::NicCollective);
    Ok(Comparison { results, host_over_pt2pt, host_over_collective })
}

/// Column order of result CSV files.
pub const RESULT_CSV_HEADER: [&str; 15] = [
    "platform",
    "mode",
    "algorithm",
    "n",
    "seed",
    "mean_us",
    "p50_us",
    "p99_us",
    "min_us",
    "max_us",
    "pkts_barrier",
    "pkts_data",
    "pkts_ack",
    "pkts_nack",
    "retransmits",
];

/// One CSV row per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub platform: String,
    pub mode: Mode,
    pub algorithm: AlgorithmKind,
    pub n: usize,
    pub seed: u64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub pkts_barrier: u64,
    pub pkts_data: u64,
    pub pkts_ack: u64,
    pub pkts_nack: u64,
    pub retransmits: u64,
}

impl ResultRow {
    pub fn new(cfg: &ExperimentConfig, m: &Measurement) -> Self {
        ResultRow {
            platform: cfg.platform.clone(),
            mode: cfg.mode,
            algorithm: cfg.alg,
            n: cfg.n,
            seed: cfg.seed,
            mean_us: m.mean_us,
            p50_us: m.p50_us,
            p99_us: m.p99_us,
            min_us: m.min_us,
            max_us: m.max_us,
            pkts_barrier: m.counts.barrier,
            pkts_data: m.counts.data,
            pkts_ack: m.counts.ack,
            pkts_nack: m.counts.nack,
            retransmits: m.retransmits,
        }
    }

    pub fn sort_key(&self) -> (String, Mode, AlgorithmKind, usize, u64) {
        (self.platform.clone(), self.mode, self.algorithm, self.n, self.seed)
    }
}
