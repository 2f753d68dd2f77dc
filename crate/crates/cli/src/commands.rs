//! Command runners: each ties ingestion, the engine, and result files
//! together. Result files never contain wall-clock measurements, so a rerun
//! with the same inputs and seed is byte-identical; timings go to stdout.

use crate::config::CliMode;
use crate::data::{self, Generator};
use serde::Serialize;
use std::path::{Path, PathBuf};
use symts_core::expr::{evaluate as evaluate_tree, to_tree, ExpressionPath};
use symts_core::library::FunctionLibrary;
use symts_core::metrics::TimeSeries;
use symts_core::pipeline::{self, EvaluationReport, ExperimentConfig, FitResult};
use symts_core::pvnet::PolicyValueNet;
use symts_core::{Error, Result};

pub struct RunContext {
    pub mode: CliMode,
    pub cfg: ExperimentConfig,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub library: Option<PathBuf>,
}

impl RunContext {
    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("--input is required for this command".into()))
    }

    fn ingest(&self) -> Result<TimeSeries> {
        data::ingest_csv(self.input()?)
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }
}

/// Load trained weights for modes that consult the network. `no_pvn` never
/// touches the model file; every other mode fails fast without one.
pub fn load_model(mode: CliMode, model: Option<&Path>) -> Result<Option<PolicyValueNet>> {
    if !mode.needs_model() {
        return Ok(None);
    }
    let Some(path) = model else {
        return Err(Error::Config(format!(
            "mode '{mode}' requires --model pointing to trained weights"
        )));
    };
    if !path.exists() {
        return Err(Error::Config(format!(
            "model file not found: {}",
            path.display()
        )));
    }
    Ok(Some(PolicyValueNet::load(path)?))
}

pub fn load_library(mode: CliMode, library: Option<&Path>) -> Result<FunctionLibrary> {
    if !mode.uses_augmented_library() {
        return Ok(FunctionLibrary::standard());
    }
    match library {
        Some(path) => FunctionLibrary::load(path),
        None => Ok(FunctionLibrary::standard()),
    }
}

/// Config block echoed into every result file so a run is reproducible
/// from the file alone.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    mode: &'a str,
    experiment: &'a ExperimentConfig,
}

impl<'a> ConfigEcho<'a> {
    fn new(ctx: &'a RunContext) -> ConfigEcho<'a> {
        ConfigEcho {
            mode: ctx.mode.as_str(),
            experiment: &ctx.cfg,
        }
    }
}

/// Serialized form of a fit: everything except the elapsed time.
#[derive(Serialize)]
struct FitRecord<'a> {
    backbone: String,
    expression: &'a str,
    coefficients: &'a [f64],
    reward: f64,
    r2: Option<f64>,
    corr: Option<f64>,
}

impl<'a> FitRecord<'a> {
    fn new(fit: &'a FitResult) -> FitRecord<'a> {
        FitRecord {
            backbone: id_string(&fit.backbone),
            expression: &fit.expression_text,
            coefficients: &fit.coefficients,
            reward: fit.reward,
            r2: fit.r2,
            corr: fit.corr,
        }
    }
}

fn id_string(tokens: &[u16]) -> String {
    let parts: Vec<String> = tokens.iter().map(|id| id.to_string()).collect();
    parts.join(" ")
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Format(format!("serialization: {e}")))
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.4}"),
        None => "skipped".into(),
    }
}

pub fn train(ctx: &RunContext) -> Result<()> {
    if ctx.mode == CliMode::NoPvn {
        return Err(Error::Config(
            "mode 'no_pvn' has no network to train; pick full, no_ps, no_re, or no_sas".into(),
        ));
    }
    let series = ctx.ingest()?;
    let (net, lib, report) = pipeline::train(&series, &ctx.cfg)?;

    let weights_path = match &ctx.model {
        Some(p) => p.clone(),
        None => ctx.out_path("weights.bin")?,
    };
    let library_path = match &ctx.library {
        Some(p) => p.clone(),
        None => ctx.out_path("library.txt")?,
    };
    net.save(&weights_path)?;
    lib.save(&library_path)?;

    #[derive(Serialize)]
    struct TrainFile<'a> {
        format: &'static str,
        version: u32,
        config: ConfigEcho<'a>,
        report: &'a pipeline::TrainReport,
    }
    let path = ctx.out_path("train.json")?;
    std::fs::write(
        &path,
        to_json(&TrainFile {
            format: "symts-train",
            version: 1,
            config: ConfigEcho::new(ctx),
            report: &report,
        })? + "\n",
    )?;

    println!(
        "trained on {} of {} windows ({} rounds, {} examples)",
        report.n_train_windows, report.n_windows, report.rounds, report.examples_seen
    );
    println!(
        "value mse before/after: {} -> {}",
        fmt_opt(report.untrained_value_mse),
        fmt_opt(report.trained_value_mse)
    );
    println!(
        "patterns recorded: {}  library entries: {}",
        report.recorded_patterns, report.augmented_entries
    );
    println!("wrote {}", weights_path.display());
    println!("wrote {}", library_path.display());
    println!("wrote {}", path.display());
    Ok(())
}

pub fn fit(ctx: &RunContext, curve: bool) -> Result<()> {
    let series = ctx.ingest()?;
    let net = load_model(ctx.mode, ctx.model.as_deref())?;
    let lib = load_library(ctx.mode, ctx.library.as_deref())?;
    let result = pipeline::fit_series(&series, net.as_ref(), &lib, &ctx.cfg)?;

    #[derive(Serialize)]
    struct FitFile<'a> {
        format: &'static str,
        version: u32,
        config: ConfigEcho<'a>,
        result: FitRecord<'a>,
    }
    let path = ctx.out_path("fit.json")?;
    std::fs::write(
        &path,
        to_json(&FitFile {
            format: "symts-fit",
            version: 1,
            config: ConfigEcho::new(ctx),
            result: FitRecord::new(&result),
        })? + "\n",
    )?;

    if curve {
        let curve_path = ctx.out_path("curve.csv")?;
        write_curve(&curve_path, &series, &result)?;
        println!("wrote {}", curve_path.display());
    }

    println!("expression: {}", result.expression_text);
    println!("reward: {:.4}", result.reward);
    println!("r2: {}  corr: {}", fmt_opt(result.r2), fmt_opt(result.corr));
    println!("elapsed: {:.3}s", result.elapsed_seconds);
    println!("wrote {}", path.display());
    Ok(())
}

/// Actual-versus-model table for the fitted expression, one row per point.
fn write_curve(path: &Path, series: &TimeSeries, fit: &FitResult) -> Result<()> {
    let tree = to_tree(&ExpressionPath::from_tokens(&fit.backbone)?)?;
    let mut out = String::from("# symts-curve v1\n");
    out.push_str(&format!("# expression: {}\n", fit.expression_text));
    out.push_str("t,actual,predicted\n");
    for (&t, &v) in series.timestamps().iter().zip(series.values()) {
        let pred = evaluate_tree(&tree, &fit.coefficients, t).unwrap_or(f64::NAN);
        out.push_str(&format!("{t},{v},{pred}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Render a report as line-delimited records: a header with the config,
/// one row per window, and a trailing summary. Timings stay on stdout.
fn report_lines(ctx: &RunContext, mode: CliMode, report: &EvaluationReport) -> Result<String> {
    #[derive(Serialize)]
    struct Header<'a> {
        format: &'static str,
        version: u32,
        config: ConfigEcho<'a>,
    }
    #[derive(Serialize)]
    struct Row<'a> {
        index: usize,
        steps: u64,
        #[serde(flatten)]
        fit: FitRecord<'a>,
    }
    #[derive(Serialize)]
    struct Summary {
        summary: bool,
        mode: String,
        windows: usize,
        mean_r2: Option<f64>,
        mean_corr: Option<f64>,
        total_steps: u64,
    }
    let mut lines = to_json(&Header {
        format: "symts-report",
        version: 1,
        config: ConfigEcho::new(ctx),
    })?;
    lines.push('\n');
    for rec in &report.records {
        lines.push_str(&to_json(&Row {
            index: rec.index,
            steps: rec.simulation_steps,
            fit: FitRecord::new(&rec.fit),
        })?);
        lines.push('\n');
    }
    lines.push_str(&to_json(&Summary {
        summary: true,
        mode: mode.as_str().into(),
        windows: report.n_windows,
        mean_r2: report.mean_r2,
        mean_corr: report.mean_corr,
        total_steps: report.total_simulation_steps,
    })?);
    lines.push('\n');
    Ok(lines)
}

fn print_report_summary(report: &EvaluationReport) {
    println!("test windows: {}", report.n_windows);
    println!(
        "mean r2: {}  mean corr: {}",
        fmt_opt(report.mean_r2),
        fmt_opt(report.mean_corr)
    );
    println!("total steps: {}", report.total_simulation_steps);
    println!(
        "atc: {:.4}s  total elapsed: {:.3}s",
        report.atc_seconds, report.total_elapsed_seconds
    );
}

pub fn evaluate(ctx: &RunContext) -> Result<()> {
    let series = ctx.ingest()?;
    let net = load_model(ctx.mode, ctx.model.as_deref())?;
    let lib = load_library(ctx.mode, ctx.library.as_deref())?;
    let report = pipeline::evaluate(&series, net.as_ref(), &lib, &ctx.cfg)?;

    let path = ctx.out_path("report.jsonl")?;
    std::fs::write(&path, report_lines(ctx, ctx.mode, &report)?)?;

    println!("mode: {}", ctx.mode);
    print_report_summary(&report);
    println!("wrote {}", path.display());
    Ok(())
}

pub fn extrapolate(ctx: &RunContext) -> Result<()> {
    let series = ctx.ingest()?;
    let net = load_model(ctx.mode, ctx.model.as_deref())?;
    let lib = load_library(ctx.mode, ctx.library.as_deref())?;
    let result = pipeline::extrapolate(&series, net.as_ref(), &lib, &ctx.cfg)?;

    #[derive(Serialize)]
    struct ExtrapolationFile<'a> {
        format: &'static str,
        version: u32,
        config: ConfigEcho<'a>,
        fit: FitRecord<'a>,
        predictions: &'a [f64],
        actual: &'a [f64],
        horizon_r2: Option<f64>,
        horizon_corr: Option<f64>,
    }
    let path = ctx.out_path("extrapolation.json")?;
    std::fs::write(
        &path,
        to_json(&ExtrapolationFile {
            format: "symts-extrapolation",
            version: 1,
            config: ConfigEcho::new(ctx),
            fit: FitRecord::new(&result.fit),
            predictions: &result.predictions,
            actual: &result.actual,
            horizon_r2: result.horizon_r2,
            horizon_corr: result.horizon_corr,
        })? + "\n",
    )?;

    println!("expression: {}", result.fit.expression_text);
    println!(
        "fit r2: {}  horizon r2: {}  horizon corr: {}",
        fmt_opt(result.fit.r2),
        fmt_opt(result.horizon_r2),
        fmt_opt(result.horizon_corr)
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Run the evaluation under each listed mode on identical windows and
/// seeds, then report per-mode totals and ratios against the first mode.
pub fn bench(ctx: &RunContext, modes_arg: &str) -> Result<()> {
    let mut modes = Vec::new();
    for part in modes_arg.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        modes.push(part.parse::<CliMode>()?);
    }
    if modes.len() < 2 {
        return Err(Error::Config(
            "--modes needs at least two comma-separated modes to compare".into(),
        ));
    }
    let series = ctx.ingest()?;
    let net = if modes.iter().any(|m| m.needs_model()) {
        let needing = *modes.iter().find(|m| m.needs_model()).unwrap();
        load_model(needing, ctx.model.as_deref())?
    } else {
        None
    };
    let shared_lib = load_library(CliMode::Full, ctx.library.as_deref())?;

    let mut runs: Vec<(CliMode, EvaluationReport)> = Vec::new();
    for &mode in &modes {
        let mut cfg = ctx.cfg;
        cfg.search.mode = mode.search_mode();
        let lib = if mode.uses_augmented_library() {
            shared_lib.clone()
        } else {
            FunctionLibrary::standard()
        };
        let mode_net = if mode.needs_model() {
            net.as_ref()
        } else {
            None
        };
        let report = pipeline::evaluate(&series, mode_net, &lib, &cfg)?;
        runs.push((mode, report));
    }

    #[derive(Serialize)]
    struct Header<'a> {
        format: &'static str,
        version: u32,
        config: ConfigEcho<'a>,
        modes: Vec<&'static str>,
    }
    #[derive(Serialize)]
    struct ModeRow {
        mode: String,
        windows: usize,
        total_steps: u64,
        mean_r2: Option<f64>,
        mean_corr: Option<f64>,
    }
    #[derive(Serialize)]
    struct RatioRow {
        baseline: String,
        mode: String,
        steps_ratio: f64,
    }
    let mut lines = to_json(&Header {
        format: "symts-bench",
        version: 1,
        config: ConfigEcho::new(ctx),
        modes: modes.iter().map(|m| m.as_str()).collect(),
    })?;
    lines.push('\n');
    for (mode, report) in &runs {
        lines.push_str(&to_json(&ModeRow {
            mode: mode.as_str().into(),
            windows: report.n_windows,
            total_steps: report.total_simulation_steps,
            mean_r2: report.mean_r2,
            mean_corr: report.mean_corr,
        })?);
        lines.push('\n');
    }

    println!(
        "{:<8} {:>8} {:>12} {:>10} {:>10} {:>10}",
        "mode", "windows", "steps", "atc", "mean_r2", "mean_corr"
    );
    let (base_mode, base) = &runs[0];
    for (mode, report) in &runs {
        println!(
            "{:<8} {:>8} {:>12} {:>10.4} {:>10} {:>10}",
            mode.as_str(),
            report.n_windows,
            report.total_simulation_steps,
            report.atc_seconds,
            fmt_opt(report.mean_r2),
            fmt_opt(report.mean_corr)
        );
    }
    for (mode, report) in runs.iter().skip(1) {
        let steps_ratio =
            report.total_simulation_steps as f64 / base.total_simulation_steps.max(1) as f64;
        let atc_ratio = report.atc_seconds / base.atc_seconds;
        println!(
            "steps ratio ({} vs {}): {}",
            mode.as_str(),
            base_mode.as_str(),
            steps_ratio
        );
        println!(
            "atc ratio ({} vs {}): {}",
            mode.as_str(),
            base_mode.as_str(),
            atc_ratio
        );
        lines.push_str(&to_json(&RatioRow {
            baseline: base_mode.as_str().into(),
            mode: mode.as_str().into(),
            steps_ratio,
        })?);
        lines.push('\n');
    }

    let path = ctx.out_path("bench.jsonl")?;
    std::fs::write(&path, lines)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn synth(generator: Generator, n: usize, noise: f64, seed: u64, out: &Path) -> Result<()> {
    if n < 2 {
        return Err(Error::Config("synth needs n >= 2".into()));
    }
    let series = data::synth(generator, n, noise, seed)?;
    let notes = vec![
        "symts-series v1".to_string(),
        format!(
            "generator={} n={} noise={} seed={}",
            generator.as_str(),
            n,
            noise,
            seed
        ),
    ];
    data::write_series_csv(out, &series, &notes)?;
    println!("wrote {} points to {}", series.len(), out.display());
    Ok(())
}
