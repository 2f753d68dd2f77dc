//! `symts`: symbolic regression for univariate time series.
//!
//! Subcommands cover the whole workflow: synthesize or ingest a series,
//! train the guidance network, fit expressions, evaluate over sliding
//! windows, extrapolate beyond the observed range, and benchmark ablation
//! modes against each other. Every run is reproducible from the input
//! file, the printed config, and the master seed.

mod commands;
mod config;
mod data;

use clap::{Args, Parser, Subcommand};
use commands::RunContext;
use config::CliMode;
use data::Generator;
use std::path::PathBuf;
use symts_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "symts",
    version,
    about = "Symbolic regression engine for univariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the policy-value network and mine the pattern library.
    Train(CommonArgs),
    /// Fit one expression to the whole input series.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write an actual-versus-model table (curve.csv).
        #[arg(long)]
        curve: bool,
    },
    /// Fit every test window and report aggregate metrics.
    Evaluate(CommonArgs),
    /// Fit a prefix of the series and predict the following points.
    Extrapolate {
        #[command(flatten)]
        common: CommonArgs,
        /// Points used for fitting (default from config).
        #[arg(long)]
        fit_length: Option<usize>,
        /// Points predicted past the fit segment (default from config).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Evaluate under several modes on identical windows and compare.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated modes; the first is the ratio baseline.
        #[arg(long, default_value = "full,no_re")]
        modes: String,
    },
    /// Write a synthetic series as CSV.
    Synth {
        /// One of: linear, sine, sine-plus-trend, log-trend, fig1.
        generator: String,
        /// Number of points.
        #[arg(long, default_value_t = 120)]
        n: usize,
        /// Gaussian noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Seed for the noise stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long, default_value = "series.csv")]
        out: PathBuf,
    },
}

fn parse_window(s: &str) -> std::result::Result<usize, String> {
    match s {
        "36" => Ok(36),
        "72" => Ok(72),
        _ => Err("window must be 36 or 72 (use --set window=N for other lengths)".into()),
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Input series CSV with t,value rows.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for result files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Window length in points.
    #[arg(long, value_parser = parse_window)]
    window: Option<usize>,
    /// Ablation mode: full, no_ps, no_re, no_pvn, or no_sas.
    #[arg(long)]
    mode: Option<String>,
    /// Trained network weights (written by train, read by the others).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Augmented function library file.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Search iterations per episode.
    #[arg(long)]
    iterations: Option<usize>,
    /// Parsimony discount base in (0, 1).
    #[arg(long)]
    eta: Option<f64>,
    /// Library size cap for mined patterns.
    #[arg(long)]
    topk: Option<usize>,
    /// Worker threads for evaluation.
    #[arg(long)]
    workers: Option<usize>,
    /// key=value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra setting as KEY=VALUE (repeatable, highest precedence).
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Flatten file and flag settings into ordered pairs; later pairs win, so
/// the order encodes the precedence CLI flags > config file > defaults,
/// with --set above everything.
fn collect_pairs(common: &CommonArgs, extra: &[(String, String)]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    if let Some(path) = &common.config {
        pairs.extend(config::parse_config_file(path)?);
    }
    if let Some(seed) = common.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(window) = common.window {
        pairs.push(("window".into(), window.to_string()));
    }
    if let Some(iterations) = common.iterations {
        pairs.push(("search.iterations".into(), iterations.to_string()));
    }
    if let Some(eta) = common.eta {
        pairs.push(("reward.eta".into(), eta.to_string()));
    }
    if let Some(topk) = common.topk {
        pairs.push(("sas.top_k".into(), topk.to_string()));
    }
    if let Some(workers) = common.workers {
        pairs.push(("workers".into(), workers.to_string()));
    }
    pairs.extend(extra.iter().cloned());
    for kv in &common.set {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects KEY=VALUE, got '{kv}'"
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn build_context(common: &CommonArgs, extra: &[(String, String)]) -> Result<RunContext> {
    let mode: CliMode = match &common.mode {
        Some(s) => s.parse()?,
        None => CliMode::Full,
    };
    let pairs = collect_pairs(common, extra)?;
    let cfg = config::resolve(mode, &pairs)?;
    Ok(RunContext {
        mode,
        cfg,
        input: common.input.clone(),
        out: common.out.clone(),
        model: common.model.clone(),
        library: common.library.clone(),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => commands::train(&build_context(&common, &[])?),
        Command::Fit { common, curve } => commands::fit(&build_context(&common, &[])?, curve),
        Command::Evaluate(common) => commands::evaluate(&build_context(&common, &[])?),
        Command::Extrapolate {
            common,
            fit_length,
            horizon,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = fit_length {
                extra.push(("fit_length".to_string(), n.to_string()));
            }
            if let Some(h) = horizon {
                extra.push(("horizon".to_string(), h.to_string()));
            }
            commands::extrapolate(&build_context(&common, &extra)?)
        }
        Command::Bench { common, modes } => commands::bench(&build_context(&common, &[])?, &modes),
        Command::Synth {
            generator,
            n,
            noise,
            seed,
            out,
        } => {
            let generator: Generator = generator.parse()?;
            commands::synth(generator, n, noise, seed, &out)
        }
    }
}

/// Exit codes: 0 success, 1 usage or configuration, 2 input data, 3 runtime.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Format(_) | Error::InsufficientData(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
