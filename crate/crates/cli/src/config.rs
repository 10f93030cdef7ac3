//! Experiment configuration from JSON files, flags and the environment.
//!
//! Precedence, highest first: command-line flags, the config file,
//! `NICSIM_SEED` (seed only), built-in defaults.

use std::path::Path;

use nicsim_core::harness::{DEFAULT_ITERATIONS, DEFAULT_WARMUP};
use nicsim_core::{AlgorithmKind, ExperimentConfig, Mode};
use serde::Deserialize;

use crate::error::CliError;

pub const SEED_ENV: &str = "NICSIM_SEED";

pub const DEFAULT_PLATFORM: &str = "myrinet-lanai-xp";
pub const DEFAULT_MODE: Mode = Mode::NicCollective;
pub const DEFAULT_ALG: AlgorithmKind = AlgorithmKind::Dissemination;
pub const DEFAULT_N: usize = 8;

pub const CONFIG_KEYS: [&str; 11] = [
    "platform",
    "mode",
    "alg",
    "n",
    "warmup",
    "iterations",
    "seed",
    "loss_prob",
    "host_skew_us",
    "trace",
    "keep_series",
];

/// One source of settings; unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub platform: Option<String>,
    pub mode: Option<Mode>,
    pub alg: Option<AlgorithmKind>,
    pub n: Option<usize>,
    pub warmup: Option<u64>,
    pub iterations: Option<u64>,
    pub seed: Option<u64>,
    pub loss_prob: Option<f64>,
    pub host_skew_us: Option<f64>,
    pub trace: Option<bool>,
    pub keep_series: Option<bool>,
}

impl ConfigLayer {
    /// Fields set in `top` win.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            platform: top.platform.or(self.platform),
            mode: top.mode.or(self.mode),
            alg: top.alg.or(self.alg),
            n: top.n.or(self.n),
            warmup: top.warmup.or(self.warmup),
            iterations: top.iterations.or(self.iterations),
            seed: top.seed.or(self.seed),
            loss_prob: top.loss_prob.or(self.loss_prob),
            host_skew_us: top.host_skew_us.or(self.host_skew_us),
            trace: top.trace.or(self.trace),
            keep_series: top.keep_series.or(self.keep_series),
        }
    }

    /// Applies defaults and the seed fallback; validates the result.
    pub fn resolve(self, env_seed: Option<&str>) -> Result<ExperimentConfig, CliError> {
        let seed = match (self.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?,
            (None, None) => 0,
        };
        let cfg = ExperimentConfig {
            platform: self.platform.unwrap_or_else(|| DEFAULT_PLATFORM.to_string()),
            mode: self.mode.unwrap_or(DEFAULT_MODE),
            alg: self.alg.unwrap_or(DEFAULT_ALG),
            n: self.n.unwrap_or(DEFAULT_N),
            warmup: self.warmup.unwrap_or(DEFAULT_WARMUP),
            iterations: self.iterations.unwrap_or(DEFAULT_ITERATIONS),
            seed,
            loss_prob: self.loss_prob,
            host_skew_us: self.host_skew_us.unwrap_or(0.0),
            trace: self.trace.unwrap_or(false),
            keep_series: self.keep_series.unwrap_or(false),
        };
        let model = cfg.cost_model()?;
        cfg.sim_config(model)?;
        Ok(cfg)
    }
}

/// Closest known key, if any is plausibly what was meant.
pub fn suggest_key(key: &str) -> Option<&'static str> {
    CONFIG_KEYS
        .iter()
        .map(|k| (k, strsim::normalized_damerau_levenshtein(key, k)))
        .filter(|(_, score)| *score >= 0.6)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| *k)
}

/// Parses one JSON config document. Unknown keys are rejected with a
/// suggestion; syntax and type errors carry line and column.
pub fn parse_layer(text: &str) -> Result<ConfigLayer, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| CliError::config("top level must be a JSON object"))?;
    for key in obj.keys() {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            let hint = suggest_key(key).map(|k| format!("; did you mean `{k}`?")).unwrap_or_default();
            return Err(CliError::config(format!("unknown key `{key}`{hint}")));
        }
    }
    serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
}

pub fn load_layer(path: &Path) -> Result<ConfigLayer, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_layer(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Resolves a config file alone, with defaults and no flags.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    load_layer(path)?.resolve(std::env::var(SEED_ENV).ok().as_deref())
}
