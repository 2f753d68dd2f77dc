//! Run configuration: ablation modes plus layered key=value settings.
//!
//! Settings resolve in precedence order CLI flags > config file > defaults.
//! Both the file and `--set` use the same flat dotted keys, so a run is
//! reproducible from the echoed config alone.

use std::path::Path;
use symts_core::mcts::SearchMode;
use symts_core::pipeline::ExperimentConfig;
use symts_core::{Error, Result};

/// Ablation switch. The first four select the search variant; `no_sas`
/// runs the full network but skips pattern recording and library mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliMode {
    Full,
    NoPs,
    NoRe,
    NoPvn,
    NoSas,
}

impl CliMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CliMode::Full => "full",
            CliMode::NoPs => "no_ps",
            CliMode::NoRe => "no_re",
            CliMode::NoPvn => "no_pvn",
            CliMode::NoSas => "no_sas",
        }
    }

    pub fn search_mode(self) -> SearchMode {
        match self {
            CliMode::Full | CliMode::NoSas => SearchMode::Full,
            CliMode::NoPs => SearchMode::NoPolicySelector,
            CliMode::NoRe => SearchMode::NoRewardEstimator,
            CliMode::NoPvn => SearchMode::NoPvn,
        }
    }

    /// Every mode except `no_pvn` consults the network somewhere.
    pub fn needs_model(self) -> bool {
        !matches!(self, CliMode::NoPvn)
    }

    pub fn uses_augmented_library(self) -> bool {
        !matches!(self, CliMode::NoSas)
    }
}

impl std::str::FromStr for CliMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<CliMode> {
        match s {
            "full" => Ok(CliMode::Full),
            "no_ps" => Ok(CliMode::NoPs),
            "no_re" => Ok(CliMode::NoRe),
            "no_pvn" => Ok(CliMode::NoPvn),
            "no_sas" => Ok(CliMode::NoSas),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected full|no_ps|no_re|no_pvn|no_sas)"
            ))),
        }
    }
}

impl std::fmt::Display for CliMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parse a `key = value` settings file. Blank lines and full-line `#`
/// comments are skipped; errors carry the 1-based line number.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}: line {}: expected key=value",
                path.display(),
                i + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

/// Apply one dotted-key setting to the config. Unknown keys are errors so
/// typos fail fast instead of silently running with defaults.
pub fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => cfg.seed = parse_as(key, value)?,
        "window" => cfg.window_length = parse_as(key, value)?,
        "stride" => cfg.stride = Some(parse_as(key, value)?),
        "train_fraction" => cfg.train_fraction = parse_as(key, value)?,
        "fit_length" => cfg.fit_length = parse_as(key, value)?,
        "horizon" => cfg.horizon = parse_as(key, value)?,
        "workers" => cfg.workers = parse_as(key, value)?,
        "rounds" => cfg.train_rounds = parse_as(key, value)?,
        "search.c" => cfg.search.c = parse_as(key, value)?,
        "search.iterations" => cfg.search.iterations_per_episode = parse_as(key, value)?,
        "search.max_path_length" => cfg.search.max_path_length = parse_as(key, value)?,
        "search.rollout_steps" => cfg.search.rollout_steps = parse_as(key, value)?,
        "reward.eta" => cfg.reward.eta = parse_as(key, value)?,
        "fit.n_restarts" => cfg.fit.n_restarts = parse_as(key, value)?,
        "fit.init_scale" => cfg.fit.init_scale = parse_as(key, value)?,
        "fit.max_outer" => cfg.fit.powell.max_outer = parse_as(key, value)?,
        "fit.f_tol" => cfg.fit.powell.f_tol = parse_as(key, value)?,
        "fit.line_tol" => cfg.fit.powell.line_tol = parse_as(key, value)?,
        "fit.max_line_iters" => cfg.fit.powell.max_line_iters = parse_as(key, value)?,
        "fit.max_bracket_steps" => cfg.fit.powell.max_bracket_steps = parse_as(key, value)?,
        "net.embed_dim" => cfg.net.embed_dim = parse_as(key, value)?,
        "net.hidden_dim" => cfg.net.hidden_dim = parse_as(key, value)?,
        "train.theta1" => cfg.train.theta1 = parse_as(key, value)?,
        "train.theta2" => cfg.train.theta2 = parse_as(key, value)?,
        "train.learning_rate" => cfg.train.learning_rate = parse_as(key, value)?,
        "train.batch_size" => cfg.train.batch_size = parse_as(key, value)?,
        "train.epochs" => cfg.train.epochs = parse_as(key, value)?,
        "train.reverse_kl" => cfg.train.reverse_kl = parse_as(key, value)?,
        "sas.enabled" => cfg.sas_enabled = parse_as(key, value)?,
        "sas.threshold" => cfg.sas_threshold = parse_as(key, value)?,
        "sas.top_k" => cfg.sas_top_k = parse_as(key, value)?,
        other => {
            return Err(Error::Config(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}

/// Build the experiment config from ordered (key, value) pairs. The window
/// is pre-scanned so length-dependent defaults (search budget) track the
/// final window even when an earlier pair would also set it.
pub fn resolve(mode: CliMode, pairs: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut window = 36usize;
    for (key, value) in pairs {
        if key == "window" {
            window = parse_as(key, value)?;
        }
    }
    let mut cfg = ExperimentConfig::new(window);
    for (key, value) in pairs {
        apply_key(&mut cfg, key, value)?;
    }
    cfg.search.mode = mode.search_mode();
    if !mode.uses_augmented_library() {
        cfg.sas_enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}
