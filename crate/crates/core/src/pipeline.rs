//! End-to-end orchestration: sliding-window sampling, training-data
//! generation, the alternating train loop, per-series fitting, dataset
//! evaluation, and extrapolation.
//!
//! Every random draw descends from one master seed through `mix_seed`, so a
//! run is reproducible from (input, config, seed) alone, including under
//! multi-threaded evaluation: each window owns a seed derived from its
//! index, not from scheduling order.

use crate::error::{Error, Result};
use crate::expr::{evaluate as evaluate_tree, to_infix, to_tree, SymbolId};
use crate::library::{mine_top_k, FunctionLibrary, PatternRecorder};
use crate::mcts::{run_episode, SearchConfig, SearchMode, SearchStats};
use crate::metrics::{atc, corr, r_squared, reward_from_error, RewardConfig, TimeSeries};
use crate::optimizer::{fit_coefficients, FitConfig};
use crate::pvnet::{NetConfig, PolicyValueNet, TrainConfig, TrainingExample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Independent seed streams carved out of the master seed.
const SALT_NET_INIT: u64 = 0x01;
const SALT_GENERATE: u64 = 0x02;
const SALT_SHUFFLE: u64 = 0x03;
const SALT_HOLDOUT: u64 = 0x04;
const SALT_EVAL: u64 = 0x05;
const SALT_FIT: u64 = 0x06;
const SALT_EXTRAPOLATE: u64 = 0x07;

/// Test windows probed for the before/after value-head comparison.
const HOLDOUT_WINDOWS: usize = 3;

/// splitmix64-style avalanche over (master, salt).
pub fn mix_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Search budget scaled to the window length.
pub fn default_iterations(window_length: usize) -> usize {
    if window_length >= 72 {
        300
    } else {
        200
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub window_length: usize,
    /// Window step; `None` means non-overlapping (stride = window length).
    pub stride: Option<usize>,
    /// Fraction of windows (earliest first) used for training.
    pub train_fraction: f64,
    /// Points fitted before an extrapolation horizon.
    pub fit_length: usize,
    /// Held-out points predicted after the fit segment.
    pub horizon: usize,
    pub seed: u64,
    /// Concurrent window fits during evaluation.
    pub workers: usize,
    /// Alternations of data generation and gradient epochs.
    pub train_rounds: usize,
    /// Pattern mining on/off (the library stays base-only when off).
    pub sas_enabled: bool,
    pub sas_threshold: f64,
    pub sas_top_k: usize,
    pub search: SearchConfig,
    pub reward: RewardConfig,
    pub fit: FitConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(window_length: usize) -> ExperimentConfig {
        let mut search = SearchConfig::default();
        search.iterations_per_episode = default_iterations(window_length);
        let mut net = NetConfig::default();
        net.window = window_length;
        ExperimentConfig {
            window_length,
            stride: None,
            train_fraction: 0.10,
            fit_length: 30,
            horizon: 6,
            seed: 0,
            workers: 1,
            train_rounds: 3,
            sas_enabled: true,
            sas_threshold: 0.5,
            sas_top_k: 10,
            search,
            reward: RewardConfig::default(),
            fit: FitConfig::default(),
            net,
            train: TrainConfig::default(),
        }
    }

    pub fn stride_or_default(&self) -> usize {
        self.stride.unwrap_or(self.window_length)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 4 {
            return Err(Error::Config("window length must be at least 4".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Config("stride must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(
                "train_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if self.fit_length < 2 {
            return Err(Error::Config("fit_length must be at least 2".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.train_rounds < 1 {
            return Err(Error::Config("train_rounds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sas_threshold) {
            return Err(Error::Config("sas_threshold must lie in [0,1]".into()));
        }
        if !(self.reward.eta > 0.0 && self.reward.eta < 1.0) {
            return Err(Error::Config(
                "eta must lie strictly between 0 and 1".into(),
            ));
        }
        if self.train.batch_size < 1 || self.train.epochs < 1 {
            return Err(Error::Config(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        if self.net.embed_dim < 1 || self.net.hidden_dim < 1 || self.net.window < 1 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        self.search.validate()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::new(36)
    }
}

/// One fitted expression with its quality measures. `r2`/`corr` are `None`
/// when skipped: the target had zero variance without a perfect fit, or the
/// fit was degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Prefix token ids of the complete backbone.
    pub backbone: Vec<SymbolId>,
    pub expression_text: String,
    pub coefficients: Vec<f64>,
    pub reward: f64,
    pub r2: Option<f64>,
    pub corr: Option<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// Index into the full window sequence (train windows included), so a
    /// record identifies its slice of the input regardless of the split.
    pub index: usize,
    pub simulation_steps: u64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub window_length: usize,
    pub n_windows: usize,
    /// Means over the windows where the metric was defined.
    pub mean_r2: Option<f64>,
    pub mean_corr: Option<f64>,
    pub total_simulation_steps: u64,
    pub total_elapsed_seconds: f64,
    pub atc_seconds: f64,
    pub records: Vec<WindowRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtrapolationResult {
    /// Fit over the first `fit_length` points only.
    pub fit: FitResult,
    /// Model values at the `horizon` timestamps after the fit segment.
    pub predictions: Vec<f64>,
    pub actual: Vec<f64>,
    pub horizon_r2: Option<f64>,
    pub horizon_corr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_windows: usize,
    pub n_train_windows: usize,
    pub n_test_windows: usize,
    pub rounds: usize,
    pub examples_seen: usize,
    pub recorded_patterns: usize,
    pub augmented_entries: usize,
    /// Value-head MSE on held-out probe examples before/after training;
    /// `None` when no test window exists to probe.
    pub untrained_value_mse: Option<f64>,
    pub trained_value_mse: Option<f64>,
    /// Mean per-batch losses over the final epoch.
    pub final_policy_loss: f64,
    pub final_value_loss: f64,
}

/// Windows at offsets 0, stride, 2*stride, ... with timestamps re-indexed
/// from 0 inside each window.
pub fn sliding_windows(
    series: &TimeSeries,
    length: usize,
    stride: usize,
) -> Result<Vec<TimeSeries>> {
    if length < 2 {
        return Err(Error::Config("window length must be at least 2".into()));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if series.len() < length {
        return Err(Error::InsufficientData(format!(
            "series of length {} cannot host a window of {}",
            series.len(),
            length
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= series.len() {
        out.push(series.window_reindexed(start, length)?);
        start += stride;
    }
    Ok(out)
}

/// Earliest-first split: train gets floor(fraction * n), but always at
/// least one window.
pub fn split_counts(n_windows: usize, train_fraction: f64) -> (usize, usize) {
    let n_train = ((n_windows as f64 * train_fraction).floor() as usize)
        .max(1)
        .min(n_windows);
    (n_train, n_windows - n_train)
}

/// R2 and correlation with the degenerate-variance policy: a zero-variance
/// target counts as a perfect fit (both metrics 1) when the total absolute
/// error is below 1e-9, and is skipped (`None`) otherwise. Non-finite
/// predictions skip both metrics.
fn guarded_metrics(predicted: &[f64], actual: &[f64]) -> (Option<f64>, Option<f64>) {
    if predicted.iter().any(|p| !p.is_finite()) {
        return (None, None);
    }
    let total_abs: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum();
    let perfect = total_abs < 1e-9;
    let r2 = match r_squared(predicted, actual) {
        Ok(v) if v.is_finite() => Some(v),
        Err(Error::UndefinedVariance(_)) if perfect => Some(1.0),
        _ => None,
    };
    let c = match corr(predicted, actual) {
        Ok(v) if v.is_finite() => Some(v),
        Err(Error::UndefinedVariance(_)) if perfect => Some(1.0),
        _ => None,
    };
    (r2, c)
}

/// Run episodes over `windows` (one each), collecting supervision tuples
/// and, when a recorder is given, feeding it every completed rollout.
/// Generation uses prior-guided selection when a net is provided and plain
/// UCB otherwise; simulation is always by random rollout, since rollouts
/// are what supply reward targets.
fn generate_into(
    windows: &[TimeSeries],
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    cfg: &ExperimentConfig,
    mut recorder: Option<&mut PatternRecorder>,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    let mut search = cfg.search;
    search.mode = if net.is_some() {
        SearchMode::NoRewardEstimator
    } else {
        SearchMode::NoPvn
    };
    let mut examples = Vec::new();
    for (i, window) in windows.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let episode = run_episode(window, &search, &cfg.reward, &cfg.fit, net, lib, &mut rng)?;
        examples.extend(episode.examples);
        if let Some(rec) = recorder.as_deref_mut() {
            for (path, reward) in &episode.rollouts {
                rec.record(path, *reward)?;
            }
        }
    }
    Ok(examples)
}

/// One pass of training-data generation over a window set. Returns the
/// supervision tuples plus a fresh recorder holding every completed rollout
/// at or above the configured reward threshold.
pub fn generate_training_data(
    windows: &[TimeSeries],
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<TrainingExample>, PatternRecorder)> {
    if windows.is_empty() {
        return Err(Error::InsufficientData(
            "no windows to generate from".into(),
        ));
    }
    let mut recorder = PatternRecorder::new(cfg.sas_threshold, cfg.sas_top_k);
    let examples = generate_into(windows, net, lib, cfg, Some(&mut recorder), seed)?;
    Ok((examples, recorder))
}

fn value_mse(net: &PolicyValueNet, examples: &[TrainingExample]) -> Result<f64> {
    let mut sum = 0.0;
    for ex in examples {
        let (_, v) = net.forward(&ex.path_tokens, &ex.series_window)?;
        sum += (v - ex.target_reward).powi(2);
    }
    Ok(sum / examples.len() as f64)
}

/// Train a fresh network on a dataset: split windows earliest-train,
/// alternate rollout-mode data generation with gradient epochs, then mine
/// the recorded patterns into the returned library. The probe examples for
/// the before/after value-head comparison come from held-out test windows,
/// generated once with uniform rollouts so they are independent of the
/// training trajectory.
pub fn train(
    dataset: &TimeSeries,
    cfg: &ExperimentConfig,
) -> Result<(PolicyValueNet, FunctionLibrary, TrainReport)> {
    cfg.validate()?;
    let windows = sliding_windows(dataset, cfg.window_length, cfg.stride_or_default())?;
    let (n_train, n_test) = split_counts(windows.len(), cfg.train_fraction);
    let train_windows = &windows[..n_train];
    let test_windows = &windows[n_train..];

    let mut net_cfg = cfg.net;
    net_cfg.window = cfg.window_length;
    net_cfg.seed = mix_seed(cfg.seed, SALT_NET_INIT);
    let mut net = PolicyValueNet::new(net_cfg);

    let base_lib = FunctionLibrary::standard();
    let mut recorder = PatternRecorder::new(cfg.sas_threshold, cfg.sas_top_k);

    let holdout = if test_windows.is_empty() {
        Vec::new()
    } else {
        let probe = &test_windows[..test_windows.len().min(HOLDOUT_WINDOWS)];
        generate_into(
            probe,
            None,
            &base_lib,
            cfg,
            None,
            mix_seed(cfg.seed, SALT_HOLDOUT),
        )?
    };
    let untrained_value_mse = if holdout.is_empty() {
        None
    } else {
        Some(value_mse(&net, &holdout)?)
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SALT_SHUFFLE));
    let mut examples_seen = 0;
    let mut final_policy_loss = 0.0;
    let mut final_value_loss = 0.0;
    for round in 0..cfg.train_rounds {
        let data = generate_into(
            train_windows,
            Some(&net),
            &base_lib,
            cfg,
            cfg.sas_enabled.then_some(&mut recorder),
            mix_seed(mix_seed(cfg.seed, SALT_GENERATE), round as u64),
        )?;
        examples_seen += data.len();
        if data.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.train.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut policy_sum = 0.0;
            let mut value_sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.train.batch_size) {
                let batch: Vec<TrainingExample> = chunk.iter().map(|&i| data[i].clone()).collect();
                let losses = net.train_step(&batch, &cfg.train)?;
                policy_sum += losses.policy;
                value_sum += losses.value;
                batches += 1;
            }
            final_policy_loss = policy_sum / batches as f64;
            final_value_loss = value_sum / batches as f64;
        }
    }

    let library = if cfg.sas_enabled {
        mine_top_k(&recorder, &base_lib)
    } else {
        base_lib
    };
    let trained_value_mse = if holdout.is_empty() {
        None
    } else {
        Some(value_mse(&net, &holdout)?)
    };

    let report = TrainReport {
        n_windows: windows.len(),
        n_train_windows: n_train,
        n_test_windows: n_test,
        rounds: cfg.train_rounds,
        examples_seen,
        recorded_patterns: recorder.len(),
        augmented_entries: library.augmented_entries().len(),
        untrained_value_mse,
        trained_value_mse,
        final_policy_loss,
        final_value_loss,
    };
    Ok((net, library, report))
}

fn fit_series_with_stats(
    series: &TimeSeries,
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(FitResult, SearchStats)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episode = run_episode(
        series,
        &cfg.search,
        &cfg.reward,
        &cfg.fit,
        net,
        lib,
        &mut rng,
    )?;
    let tree = to_tree(&episode.backbone)?;
    let fitted = fit_coefficients(
        &tree,
        series.timestamps(),
        series.values(),
        &cfg.fit,
        &mut rng,
    )?;
    let reward = reward_from_error(fitted.abs_error, tree.size(), &cfg.reward);
    let mut predictions = Vec::with_capacity(series.len());
    for &t in series.timestamps() {
        predictions.push(evaluate_tree(&tree, &fitted.coeffs, t)?);
    }
    let (r2, corr) = guarded_metrics(&predictions, series.values());
    let result = FitResult {
        backbone: episode.backbone.tokens().to_vec(),
        expression_text: to_infix(&tree, &fitted.coeffs)?,
        coefficients: fitted.coeffs,
        reward,
        r2,
        corr,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((result, episode.stats))
}

/// Search, fit, and score one series; the search backbone is refit on the
/// same series the metrics are computed on.
pub fn fit_series(
    series: &TimeSeries,
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    cfg: &ExperimentConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let (result, _) = fit_series_with_stats(series, net, lib, cfg, mix_seed(cfg.seed, SALT_FIT))?;
    Ok(result)
}

/// Fit every test window of the dataset and aggregate mean metrics and the
/// average time cost. Window fits run on `cfg.workers` threads; results are
/// keyed by window index, so the report does not depend on scheduling.
pub fn evaluate(
    dataset: &TimeSeries,
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    cfg: &ExperimentConfig,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let windows = sliding_windows(dataset, cfg.window_length, cfg.stride_or_default())?;
    let (n_train, _) = split_counts(windows.len(), cfg.train_fraction);
    let test = &windows[n_train..];
    if test.is_empty() {
        return Err(Error::InsufficientData(
            "no test windows remain after the train split".into(),
        ));
    }

    let start = Instant::now();
    let workers = cfg.workers.min(test.len());
    let mut results: Vec<Option<Result<(FitResult, SearchStats)>>> = Vec::new();
    results.resize_with(test.len(), || None);
    if workers <= 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            let seed = mix_seed(mix_seed(cfg.seed, SALT_EVAL), (n_train + i) as u64);
            *slot = Some(fit_series_with_stats(&test[i], net, lib, cfg, seed));
        }
    } else {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..test.len()).step_by(workers).collect())
            .collect();
        let mut partials: Vec<Vec<(usize, Result<(FitResult, SearchStats)>)>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|own| {
                        scope.spawn(move || {
                            own.iter()
                                .map(|&i| {
                                    let seed = mix_seed(
                                        mix_seed(cfg.seed, SALT_EVAL),
                                        (n_train + i) as u64,
                                    );
                                    (i, fit_series_with_stats(&test[i], net, lib, cfg, seed))
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("window fit worker panicked"))
                    .collect()
            });
        for part in &mut partials {
            for (i, r) in part.drain(..) {
                results[i] = Some(r);
            }
        }
    }

    let mut records = Vec::with_capacity(test.len());
    let mut total_steps = 0u64;
    for (i, slot) in results.into_iter().enumerate() {
        let (fit, stats) = slot.expect("every window slot filled")?;
        total_steps += stats.simulation_steps;
        records.push(WindowRecord {
            index: n_train + i,
            simulation_steps: stats.simulation_steps,
            fit,
        });
    }
    let total_elapsed = start.elapsed().as_secs_f64();

    let mean_over = |xs: Vec<f64>| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let mean_r2 = mean_over(records.iter().filter_map(|r| r.fit.r2).collect());
    let mean_corr = mean_over(records.iter().filter_map(|r| r.fit.corr).collect());

    Ok(EvaluationReport {
        window_length: cfg.window_length,
        n_windows: records.len(),
        mean_r2,
        mean_corr,
        total_simulation_steps: total_steps,
        total_elapsed_seconds: total_elapsed,
        atc_seconds: atc(total_elapsed, records.len()),
        records,
    })
}

/// Fit the first `fit_length` points, then score the fitted expression on
/// the next `horizon` points, which the fit never sees. The fit segment is
/// re-indexed from 0, so horizon predictions continue that clock.
pub fn extrapolate(
    series: &TimeSeries,
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    cfg: &ExperimentConfig,
) -> Result<ExtrapolationResult> {
    cfg.validate()?;
    let needed = cfg.fit_length + cfg.horizon;
    if series.len() < needed {
        return Err(Error::InsufficientData(format!(
            "extrapolation needs {} points (fit {} + horizon {}), series has {}",
            needed,
            cfg.fit_length,
            cfg.horizon,
            series.len()
        )));
    }
    let fit_window = series.window_reindexed(0, cfg.fit_length)?;
    let (fit, _) = fit_series_with_stats(
        &fit_window,
        net,
        lib,
        cfg,
        mix_seed(cfg.seed, SALT_EXTRAPOLATE),
    )?;
    let path = crate::expr::ExpressionPath::from_tokens(&fit.backbone)?;
    let tree = to_tree(&path)?;
    let mut predictions = Vec::with_capacity(cfg.horizon);
    for j in 0..cfg.horizon {
        let t = (cfg.fit_length + j) as f64;
        predictions.push(evaluate_tree(&tree, &fit.coefficients, t)?);
    }
    let actual = series.values()[cfg.fit_length..needed].to_vec();
    let (horizon_r2, horizon_corr) = guarded_metrics(&predictions, &actual);
    Ok(ExtrapolationResult {
        fit,
        predictions,
        actual,
        horizon_r2,
        horizon_corr,
    })
}
