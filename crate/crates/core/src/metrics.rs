//! Time-series container, fit-quality metrics, and the search reward.

use crate::error::{Error, Result};
use crate::expr::{evaluate, ExpressionTree};
use serde::{Deserialize, Serialize};

/// An observed univariate series: strictly increasing timestamps paired with
/// values, at least two points, everything finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    timestamps: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<f64>, values: Vec<f64>) -> Result<TimeSeries> {
        if timestamps.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} timestamps vs {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a series needs at least 2 points, got {}",
                timestamps.len()
            )));
        }
        if timestamps.iter().any(|t| !t.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContractViolation(
                "series contains non-finite entries".into(),
            ));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ContractViolation(
                "timestamps are not strictly increasing".into(),
            ));
        }
        Ok(TimeSeries { timestamps, values })
    }

    /// A series on the integer grid 0,1,2,…
    pub fn from_values(values: Vec<f64>) -> Result<TimeSeries> {
        let timestamps = (0..values.len()).map(|i| i as f64).collect();
        TimeSeries::new(timestamps, values)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor guarantees at least two points
    }

    /// The sub-window `[start, start+len)` with timestamps re-indexed to
    /// 0,1,2,…; windows are fitted on their own local clock.
    pub fn window_reindexed(&self, start: usize, len: usize) -> Result<TimeSeries> {
        if start + len > self.len() {
            return Err(Error::InsufficientData(format!(
                "window {start}+{len} exceeds series length {}",
                self.len()
            )));
        }
        TimeSeries::from_values(self.values[start..start + len].to_vec())
    }
}

/// Coefficient of determination: `1 - SS_res / SS_tot`, with SS_tot about
/// the mean of `actual`. Can be arbitrarily negative for fits worse than the
/// mean predictor.
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predicted vs {} actual",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::UndefinedVariance("empty series".into()));
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedVariance(
            "actual values are all identical".into(),
        ));
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(v, f)| (v - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation coefficient.
pub fn corr(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predicted vs {} actual",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::UndefinedVariance("empty series".into()));
    }
    let n = predicted.len() as f64;
    let mean_p = predicted.iter().sum::<f64>() / n;
    let mean_a = actual.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_a = 0.0;
    for (x, y) in predicted.iter().zip(actual) {
        let dp = x - mean_p;
        let da = y - mean_a;
        cov += dp * da;
        var_p += dp * dp;
        var_a += da * da;
    }
    if var_p == 0.0 || var_a == 0.0 {
        return Err(Error::UndefinedVariance(
            "a zero-variance side makes correlation undefined".into(),
        ));
    }
    Ok(cov / (var_p.sqrt() * var_a.sqrt()))
}

/// Average time cost per sample, in seconds.
pub fn atc(total_elapsed_seconds: f64, n_samples: usize) -> f64 {
    assert!(n_samples >= 1, "atc needs at least one sample");
    total_elapsed_seconds / n_samples as f64
}

/// Reward shaping parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Per-node parsimony discount base, strictly inside (0, 1).
    pub eta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { eta: 0.99 }
    }
}

/// Reward from a pre-computed total absolute error:
/// `eta^size / (1 + abs_error)`; non-finite error means the expression blew
/// up somewhere, which scores 0.
pub fn reward_from_error(abs_error: f64, size: usize, cfg: &RewardConfig) -> f64 {
    debug_assert!(cfg.eta > 0.0 && cfg.eta < 1.0);
    if !abs_error.is_finite() {
        return 0.0;
    }
    cfg.eta.powi(size as i32) / (1.0 + abs_error)
}

/// Reward from observed and predicted values. `size` is the expression's
/// node count.
pub fn reward_from_predictions(
    observed: &[f64],
    predicted: &[f64],
    size: usize,
    cfg: &RewardConfig,
) -> f64 {
    debug_assert_eq!(observed.len(), predicted.len());
    let mut err = 0.0;
    for (v, f) in observed.iter().zip(predicted) {
        if !f.is_finite() {
            return 0.0;
        }
        err += (v - f).abs();
    }
    reward_from_error(err, size, cfg)
}

/// Reward of a fitted expression on a series. Degenerate expressions score
/// 0 rather than erroring; only a coefficient-count mismatch is an error.
pub fn reward(
    series: &TimeSeries,
    tree: &ExpressionTree,
    coeffs: &[f64],
    cfg: &RewardConfig,
) -> Result<f64> {
    let mut predicted = Vec::with_capacity(series.len());
    for &t in series.timestamps() {
        predicted.push(evaluate(tree, coeffs, t)?);
    }
    Ok(reward_from_predictions(
        series.values(),
        &predicted,
        tree.size(),
        cfg,
    ))
}
