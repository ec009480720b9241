//! Forecasts of geotemporal inputs over the planning window, and a
//! multiplicative error model for studying forecast quality.

use chrono::TimeDelta;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::timeseries::{TimeSeries, Timestamp};

/// The planning horizon: `length` steps starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ForecastWindow {
    pub start: Timestamp,
    pub length: usize,
    pub step: TimeDelta,
}

impl ForecastWindow {
    pub const DEFAULT_LENGTH: usize = 12;

    pub fn new(start: Timestamp, length: usize, step: TimeDelta) -> Result<Self> {
        if length < 1 {
            return Err(Error::Forecast("forecast window needs at least one step".into()));
        }
        if step <= TimeDelta::zero() {
            return Err(Error::Forecast("forecast window step must be positive".into()));
        }
        Ok(Self { start, length, step })
    }

    pub fn timestamp(&self, offset: usize) -> Timestamp {
        self.start + self.step * offset as i32
    }

    /// First timestamp after the window.
    pub fn end(&self) -> Timestamp {
        self.timestamp(self.length)
    }

    /// Offset of `t` inside the window, if any.
    pub fn offset_of(&self, t: Timestamp) -> Option<usize> {
        let d = t - self.start;
        if d < TimeDelta::zero() || d.num_seconds() % self.step.num_seconds() != 0 {
            return None;
        }
        let off = (d.num_seconds() / self.step.num_seconds()) as usize;
        (off < self.length).then_some(off)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ForecastMethod {
    /// Repeat the last observed value.
    Persistence,
    /// Mean of the last `k` observations.
    Sma { k: usize },
    /// Holt's linear (double exponential) smoothing.
    DoubleExponential { alpha: f64, beta: f64 },
}

/// Forecasts `window` from `history`, which must end right before the window.
pub fn forecast(history: &TimeSeries<f64>, window: &ForecastWindow, method: ForecastMethod) -> Result<TimeSeries<f64>> {
    let xs = history.values();
    if xs.is_empty() {
        return Err(Error::Forecast("history is empty".into()));
    }
    if history.step() != window.step || history.end() != window.start {
        return Err(Error::Forecast(format!(
            "window must start one step after the history ({}), got {}",
            history.end(),
            window.start
        )));
    }
    let values = match method {
        ForecastMethod::Persistence => vec![xs[xs.len() - 1]; window.length],
        ForecastMethod::Sma { k } => {
            if k == 0 || k > xs.len() {
                return Err(Error::Forecast(format!(
                    "sma window {k} needs 1..={} observations",
                    xs.len()
                )));
            }
            let mean = xs[xs.len() - k..].iter().sum::<f64>() / k as f64;
            vec![mean; window.length]
        }
        ForecastMethod::DoubleExponential { alpha, beta } => {
            if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
                return Err(Error::Forecast("smoothing factors must lie in [0, 1]".into()));
            }
            let (level, trend) = holt(xs, alpha, beta);
            (1..=window.length).map(|h| level + h as f64 * trend).collect()
        }
    };
    TimeSeries::new(window.start, window.step, values)
}

fn holt(xs: &[f64], alpha: f64, beta: f64) -> (f64, f64) {
    let mut level = xs[0];
    let mut trend = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
    for &x in &xs[1..] {
        let prev = level;
        level = alpha * x + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev) + (1.0 - beta) * trend;
    }
    (level, trend)
}

/// Multiplicative Gaussian forecast error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModel {
    /// Relative standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl ErrorModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Forecast(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }
}

/// `actual_t * max(0, 1 + N(0, sigma))`. With `sigma == 0` the series is
/// returned unchanged.
pub fn perturb(actual: &TimeSeries<f64>, model: &ErrorModel) -> TimeSeries<f64> {
    if model.sigma == 0.0 {
        return actual.clone();
    }
    let normal = Normal::new(0.0, model.sigma).expect("sigma is finite and positive");
    let mut rng = stream(model.seed, &[0x7065_7274]);
    actual.map(|&v| v * (1.0 + normal.sample(&mut rng)).max(0.0))
}
