//! Closed-form latency model for NIC-based dissemination barriers:
//!
//! `T(n) = t_init + (ceil(log2 n) - 1) * t_trig + t_adj`
//!
//! plus the two published constant sets and a least-squares fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;
use crate::schedule::ceil_log;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub label: String,
    /// Two-node base latency (µs).
    pub t_init: f64,
    /// Increment per additional triggered message (µs).
    pub t_trig: f64,
    /// Adjustment term (µs); may be negative.
    pub t_adj: f64,
}

impl ModelParams {
    pub fn new(label: impl Into<String>, t_init: f64, t_trig: f64, t_adj: f64) -> Result<Self, ConfigError> {
        if !(t_init.is_finite() && t_trig.is_finite() && t_adj.is_finite()) {
            return Err(ConfigError::invalid("model", "constants must be finite"));
        }
        if t_init < 0.0 || t_trig < 0.0 {
            return Err(ConfigError::invalid("model", "t_init and t_trig must be >= 0"));
        }
        Ok(ModelParams { label: label.into(), t_init, t_trig, t_adj })
    }
}

/// Predicted barrier latency in µs for `n >= 2` nodes. Unrounded.
pub fn predict_latency(p: &ModelParams, n: usize) -> Result<f64, ConfigError> {
    if n < 2 {
        return Err(ConfigError::invalid("n", format!("the model is defined for n >= 2, got {n}")));
    }
    let steps = (ceil_log(2, n) - 1) as f64;
    Ok(p.t_init + steps * p.t_trig + p.t_adj)
}

/// Published constants. Only the two platforms with fitted values have them.
pub fn builtin_params(platform: &str) -> Result<ModelParams, ConfigError> {
    match platform {
        "myrinet-lanai-xp" => ModelParams::new(platform, 3.60, 3.50, 3.84),
        "quadrics-elan3" => ModelParams::new(platform, 2.25, 2.32, -1.00),
        other => Err(ConfigError::UnknownPlatform(format!("{other} (no published model constants)"))),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples cover fewer than 2 distinct values of ceil(log2 n); slope is undetermined")]
    RankDeficient,
    #[error("invalid sample (n={n}, latency={latency}): n must be >= 2 and latency finite")]
    BadSample { n: usize, latency: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub params: ModelParams,
    /// `t_init + t_adj`.
    pub intercept: f64,
    pub max_abs_residual: f64,
}

/// Ordinary least squares of `latency = a + b * (ceil(log2 n) - 1)`.
///
/// Only `a` and `b` are identifiable. `t_init` is taken as the mean n=2
/// sample when there is one (otherwise `a`), and `t_adj = a - t_init`.
pub fn fit_constants(samples: &[(usize, f64)]) -> Result<Fit, FitError> {
    if samples.len() < 3 {
        return Err(FitError::TooFewSamples(samples.len()));
    }
    if let Some(&(n, latency)) = samples.iter().find(|(n, l)| *n < 2 || !l.is_finite()) {
        return Err(FitError::BadSample { n, latency });
    }
    let xs: Vec<f64> = samples.iter().map(|&(n, _)| (ceil_log(2, n) - 1) as f64).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, l)| l).collect();
    let m = samples.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(FitError::RankDeficient);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let max_abs_residual = xs.iter().zip(&ys).map(|(x, y)| (y - (a + b * x)).abs()).fold(0.0, f64::max);

    let twos: Vec<f64> = samples.iter().filter(|(n, _)| *n == 2).map(|&(_, l)| l).collect();
    let t_init = if twos.is_empty() { a } else { twos.iter().sum::<f64>() / twos.len() as f64 };
    let params = ModelParams { label: "fit".to_string(), t_init, t_trig: b, t_adj: a - t_init };
    Ok(Fit { params, intercept: a, max_abs_residual })
}
