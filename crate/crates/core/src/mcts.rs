//! Four-phase tree search over expression paths: selection, expansion,
//! simulation, back-propagation.
//!
//! Selection scores expanded children with PUCT (prior-weighted) or UCB
//! depending on the mode; simulation either asks the value head for a reward
//! estimate or runs a random rollout that is completed, fitted, and scored
//! with the parsimony reward. Every stochastic draw comes from the caller's
//! random source, so a fixed seed fixes the whole episode.

use crate::error::{Error, Result};
use crate::expr::{
    to_tree, BaseToken, ExpressionPath, Symbol, SymbolId, SymbolKind, ACTION_SPACE, AUGMENTED_TOKEN,
};
use crate::library::FunctionLibrary;
use crate::metrics::{reward_from_error, RewardConfig, TimeSeries};
use crate::optimizer::{fit_coefficients, FitConfig};
use crate::pvnet::{PolicyValueNet, TrainingExample};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which parts of the guidance stack an episode uses. Serialized under the
/// same names the command line uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    /// PUCT selection with policy priors; value-head reward estimation.
    #[serde(rename = "full")]
    Full,
    /// UCB selection (no priors); value-head reward estimation.
    #[serde(rename = "no_ps")]
    NoPolicySelector,
    /// PUCT selection with policy priors; random-rollout simulation. This is
    /// also the data-generation mode during training.
    #[serde(rename = "no_re")]
    NoRewardEstimator,
    /// UCB selection and random rollouts; the network is never consulted.
    #[serde(rename = "no_pvn")]
    NoPvn,
}

impl SearchMode {
    /// Selection uses policy priors (PUCT) rather than UCB.
    pub fn uses_priors(self) -> bool {
        matches!(self, SearchMode::Full | SearchMode::NoRewardEstimator)
    }

    /// Simulation is a single value-head call rather than a random rollout.
    pub fn uses_value_estimate(self) -> bool {
        matches!(self, SearchMode::Full | SearchMode::NoPolicySelector)
    }

    pub fn needs_net(self) -> bool {
        self.uses_priors() || self.uses_value_estimate()
    }

    /// The command-line spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Full => "full",
            SearchMode::NoPolicySelector => "no_ps",
            SearchMode::NoRewardEstimator => "no_re",
            SearchMode::NoPvn => "no_pvn",
        }
    }
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<SearchMode> {
        match s {
            "full" => Ok(SearchMode::Full),
            "no_ps" => Ok(SearchMode::NoPolicySelector),
            "no_re" => Ok(SearchMode::NoRewardEstimator),
            "no_pvn" => Ok(SearchMode::NoPvn),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected full|no_ps|no_re|no_pvn)"
            ))),
        }
    }
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Exploration constant in both scoring rules.
    pub c: f64,
    /// Hard cap on path length, counted in tokens after pattern inlining.
    pub max_path_length: usize,
    pub iterations_per_episode: usize,
    /// Cap on counted extension steps per random rollout.
    pub rollout_steps: usize,
    pub mode: SearchMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            c: 1.0,
            max_path_length: 20,
            iterations_per_episode: 200,
            rollout_steps: 200,
            mode: SearchMode::Full,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_path_length < 3 {
            return Err(Error::Config(
                "max_path_length below 3 cannot hold a binary expression".into(),
            ));
        }
        if self.rollout_steps < 1 {
            return Err(Error::Config("rollout_steps must be at least 1".into()));
        }
        if self.iterations_per_episode < 1 {
            return Err(Error::Config(
                "iterations_per_episode must be at least 1".into(),
            ));
        }
        if !self.c.is_finite() || self.c < 0.0 {
            return Err(Error::Config(
                "exploration constant must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Instrumentation counters for one episode.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SearchStats {
    /// Value-head calls plus counted rollout extension steps.
    pub simulation_steps: u64,
}

/// Everything an episode hands back to its caller.
pub struct EpisodeResult {
    /// Complete expression path following the highest visit count per level.
    pub backbone: ExpressionPath,
    pub stats: SearchStats,
    /// Supervision tuples; empty in value-estimate modes.
    pub examples: Vec<TrainingExample>,
    /// Completed rollout paths with their rewards, for pattern mining;
    /// empty in value-estimate modes.
    pub rollouts: Vec<(ExpressionPath, f64)>,
}

/// Mean reward plus the prior-weighted exploration bonus:
/// `Q + c * P * sqrt(sibling_visits) / (1 + n_visits)`.
pub fn puct_score(q_total: f64, n_visits: u64, prior: f64, sibling_visits: u64, c: f64) -> f64 {
    let q = q_total / (n_visits.max(1) as f64);
    q + c * prior * (sibling_visits as f64).sqrt() / (1.0 + n_visits as f64)
}

/// Mean reward plus the count-based exploration bonus:
/// `Q + c * sqrt(ln(sibling_visits) / (1 + n_visits))`.
pub fn ucb_score(q_total: f64, n_visits: u64, sibling_visits: u64, c: f64) -> f64 {
    let q = q_total / (n_visits.max(1) as f64);
    q + c * ((sibling_visits.max(1) as f64).ln() / (1.0 + n_visits as f64)).sqrt()
}

struct Node {
    path: ExpressionPath,
    q_total: f64,
    n_visits: u64,
    prior: f64,
    /// (action id, node index), kept sorted by action id.
    children: Vec<(SymbolId, usize)>,
    /// Eligible actions not yet expanded, sorted ascending.
    untried: Vec<SymbolId>,
    /// Count of the eligible action set at creation; the uniform prior base.
    eligible_count: usize,
    parent: Option<usize>,
    /// Policy distribution over this node's eligible actions, cached at
    /// first expansion (prior modes only).
    priors: Option<Vec<f64>>,
}

/// True when appending `action` to `path` still admits a completion within
/// `max_len` tokens. For the augmented token, at least one library pattern
/// must fit.
fn action_fits(
    path: &ExpressionPath,
    action: &Symbol,
    lib: &FunctionLibrary,
    max_len: usize,
) -> bool {
    if path.is_complete() {
        return false;
    }
    let open = path.open_slots() as usize;
    if action.kind == SymbolKind::Augmented {
        lib.augmented_entries()
            .iter()
            .any(|e| path.len() + e.pattern.len() + open - 1 <= max_len)
    } else {
        path.len() + open + action.arity as usize <= max_len
    }
}

/// Eligible action ids for a path state, ascending.
fn eligible_actions(path: &ExpressionPath, lib: &FunctionLibrary, max_len: usize) -> Vec<SymbolId> {
    lib.eligible_symbols()
        .iter()
        .filter(|s| action_fits(path, s, lib, max_len))
        .map(|s| s.id)
        .collect()
}

/// Count-proportional pattern draw restricted to patterns that fit the
/// remaining length budget. Delegates to the library's secondary sampler
/// when every pattern fits.
fn sample_fitting_pattern<R: Rng>(
    lib: &FunctionLibrary,
    path: &ExpressionPath,
    max_len: usize,
    rng: &mut R,
) -> Result<ExpressionPath> {
    let open = path.open_slots() as usize;
    let entries = lib.augmented_entries();
    let fits = |p: &ExpressionPath| path.len() + p.len() + open - 1 <= max_len;
    if entries.iter().all(|e| fits(&e.pattern)) {
        return Ok(lib.secondary_sample(rng)?.pattern.clone());
    }
    let fitting: Vec<_> = entries.iter().filter(|e| fits(&e.pattern)).collect();
    if fitting.is_empty() {
        return Err(Error::ExhaustedLibrary(
            "no augmented pattern fits the length budget".into(),
        ));
    }
    let total: u64 = fitting.iter().map(|e| e.count).sum();
    let mut ticket = rng.gen_range(0..total);
    for e in &fitting {
        if ticket < e.count {
            return Ok(e.pattern.clone());
        }
        ticket -= e.count;
    }
    unreachable!("ticket below total count")
}

fn apply_action<R: Rng>(
    path: &ExpressionPath,
    action: SymbolId,
    lib: &FunctionLibrary,
    max_len: usize,
    rng: &mut R,
) -> Result<ExpressionPath> {
    if action == AUGMENTED_TOKEN {
        let pattern = sample_fitting_pattern(lib, path, max_len, rng)?;
        path.push_pattern(&pattern)
    } else {
        let tok = BaseToken::from_id(action).ok_or(Error::Vocabulary(action))?;
        path.push_token(tok)
    }
}

struct SearchTree<'a> {
    nodes: Vec<Node>,
    cfg: &'a SearchConfig,
    lib: &'a FunctionLibrary,
}

impl<'a> SearchTree<'a> {
    fn new(cfg: &'a SearchConfig, lib: &'a FunctionLibrary) -> SearchTree<'a> {
        let root_path = ExpressionPath::new();
        let untried = eligible_actions(&root_path, lib, cfg.max_path_length);
        let eligible_count = untried.len();
        SearchTree {
            nodes: vec![Node {
                path: root_path,
                q_total: 0.0,
                n_visits: 0,
                prior: 1.0,
                children: Vec::new(),
                untried,
                eligible_count,
                parent: None,
                priors: None,
            }],
            cfg,
            lib,
        }
    }

    fn score_of(&self, child_idx: usize, sibling_visits: u64) -> f64 {
        let child = &self.nodes[child_idx];
        if self.cfg.mode.uses_priors() {
            puct_score(
                child.q_total,
                child.n_visits,
                child.prior,
                sibling_visits,
                self.cfg.c,
            )
        } else {
            ucb_score(child.q_total, child.n_visits, sibling_visits, self.cfg.c)
        }
    }

    /// Descend by argmax score among expanded children until hitting a node
    /// with untried actions or no children at all. Ties go to the lowest
    /// action id (children are stored sorted, strict improvement required).
    fn select(&self, from: usize) -> usize {
        let mut at = from;
        loop {
            let node = &self.nodes[at];
            if !node.untried.is_empty() || node.children.is_empty() {
                return at;
            }
            let sibling_visits: u64 = node
                .children
                .iter()
                .map(|&(_, i)| self.nodes[i].n_visits)
                .sum();
            let mut best = node.children[0].1;
            let mut best_score = self.score_of(best, sibling_visits);
            for &(_, idx) in &node.children[1..] {
                let s = self.score_of(idx, sibling_visits);
                if s > best_score {
                    best = idx;
                    best_score = s;
                }
            }
            at = best;
        }
    }

    /// Cached policy distribution over the node's eligible actions, masked
    /// and renormalized from one policy-head call.
    fn node_priors<R: Rng>(
        &mut self,
        idx: usize,
        net: Option<&PolicyValueNet>,
        series: &TimeSeries,
        _rng: &mut R,
    ) -> Result<Vec<f64>> {
        if let Some(p) = &self.nodes[idx].priors {
            return Ok(p.clone());
        }
        let dist = if self.cfg.mode.uses_priors() {
            let net =
                net.ok_or_else(|| Error::Config("this search mode needs network weights".into()))?;
            let (raw, _) = net.forward(self.nodes[idx].path.tokens(), series.values())?;
            let node = &self.nodes[idx];
            let eligible: Vec<SymbolId> = node
                .children
                .iter()
                .map(|&(a, _)| a)
                .chain(node.untried.iter().copied())
                .collect();
            let mass: f64 = eligible.iter().map(|&a| raw[a as usize]).sum();
            let mut dist = vec![0.0; ACTION_SPACE];
            if mass > 1e-12 {
                for &a in &eligible {
                    dist[a as usize] = raw[a as usize] / mass;
                }
            } else {
                let u = 1.0 / eligible.len() as f64;
                for &a in &eligible {
                    dist[a as usize] = u;
                }
            }
            dist
        } else {
            let node = &self.nodes[idx];
            let u = 1.0 / node.eligible_count.max(1) as f64;
            let mut dist = vec![0.0; ACTION_SPACE];
            for &(a, _) in &node.children {
                dist[a as usize] = u;
            }
            for &a in &node.untried {
                dist[a as usize] = u;
            }
            dist
        };
        self.nodes[idx].priors = Some(dist.clone());
        Ok(dist)
    }

    /// Create one child from a uniformly drawn untried action.
    fn expand<R: Rng>(
        &mut self,
        idx: usize,
        net: Option<&PolicyValueNet>,
        series: &TimeSeries,
        rng: &mut R,
    ) -> Result<usize> {
        if self.nodes[idx].path.len() >= self.cfg.max_path_length
            || self.nodes[idx].path.is_complete()
        {
            return Err(Error::TerminalNode(format!(
                "path length {} of {} allowed, complete: {}",
                self.nodes[idx].path.len(),
                self.cfg.max_path_length,
                self.nodes[idx].path.is_complete()
            )));
        }
        if self.nodes[idx].untried.is_empty() {
            return Err(Error::ExhaustedExpansion);
        }
        let priors = self.node_priors(idx, net, series, rng)?;
        let pick = rng.gen_range(0..self.nodes[idx].untried.len());
        let action = self.nodes[idx].untried.remove(pick);
        let child_path = apply_action(
            &self.nodes[idx].path,
            action,
            self.lib,
            self.cfg.max_path_length,
            rng,
        )?;
        let untried = eligible_actions(&child_path, self.lib, self.cfg.max_path_length);
        let eligible_count = untried.len();
        let child = Node {
            path: child_path,
            q_total: 0.0,
            n_visits: 0,
            prior: priors[action as usize],
            children: Vec::new(),
            untried,
            eligible_count,
            parent: Some(idx),
            priors: None,
        };
        let child_idx = self.nodes.len();
        self.nodes.push(child);
        let pos = self.nodes[idx]
            .children
            .binary_search_by_key(&action, |&(a, _)| a)
            .expect_err("action was untried, so no child exists for it");
        self.nodes[idx].children.insert(pos, (action, child_idx));
        Ok(child_idx)
    }

    /// Estimate or measure the reward at a node.
    #[allow(clippy::too_many_arguments)]
    fn simulate<R: Rng>(
        &self,
        idx: usize,
        series: &TimeSeries,
        net: Option<&PolicyValueNet>,
        reward_cfg: &RewardConfig,
        fit_cfg: &FitConfig,
        stats: &mut SearchStats,
        rollouts: &mut Vec<(ExpressionPath, f64)>,
        rng: &mut R,
    ) -> Result<f64> {
        if self.cfg.mode.uses_value_estimate() {
            let net =
                net.ok_or_else(|| Error::Config("this search mode needs network weights".into()))?;
            let (_, estimate) = net.forward(self.nodes[idx].path.tokens(), series.values())?;
            stats.simulation_steps += 1;
            return Ok(estimate.clamp(0.0, 1.0));
        }
        // Random rollout: counted uniform extensions, then autocompletion.
        let mut path = self.nodes[idx].path.clone();
        let mut counted = 0usize;
        while !path.is_complete() && counted < self.cfg.rollout_steps {
            let sym = match self.lib.sample_uniform_where(rng, |s| {
                action_fits(&path, s, self.lib, self.cfg.max_path_length)
            }) {
                Ok(s) => s,
                Err(Error::ExhaustedLibrary(_)) => break,
                Err(e) => return Err(e),
            };
            path = apply_action(&path, sym.id, self.lib, self.cfg.max_path_length, rng)?;
            stats.simulation_steps += 1;
            counted += 1;
        }
        let full = path.autocomplete();
        let tree = to_tree(&full)?;
        let fit = fit_coefficients(&tree, series.timestamps(), series.values(), fit_cfg, rng)?;
        let reward = reward_from_error(fit.abs_error, tree.size(), reward_cfg);
        rollouts.push((full, reward));
        Ok(reward)
    }

    /// Add the reward along the leaf-to-root chain.
    fn backpropagate(&mut self, leaf: usize, reward: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::ContractViolation(format!(
                "reward {reward} outside [0,1]"
            )));
        }
        let mut at = Some(leaf);
        while let Some(idx) = at {
            self.nodes[idx].n_visits += 1;
            self.nodes[idx].q_total += reward;
            at = self.nodes[idx].parent;
        }
        Ok(())
    }

    /// Path following the highest visit count per level, autocompleted.
    fn backbone(&self) -> ExpressionPath {
        let mut at = 0usize;
        loop {
            let node = &self.nodes[at];
            if node.children.is_empty() {
                return node.path.autocomplete();
            }
            // Sorted children + strict improvement = lowest id wins ties.
            let mut best = node.children[0].1;
            for &(_, idx) in &node.children[1..] {
                if self.nodes[idx].n_visits > self.nodes[best].n_visits {
                    best = idx;
                }
            }
            at = best;
        }
    }

    /// Normalized score distribution over a node's expanded children:
    /// scores are min-shifted, nudged by 1e-6, and sum-normalized.
    fn score_distribution(&self, idx: usize) -> Option<Vec<f64>> {
        let node = &self.nodes[idx];
        if node.children.is_empty() {
            return None;
        }
        let sibling_visits: u64 = node
            .children
            .iter()
            .map(|&(_, i)| self.nodes[i].n_visits)
            .sum();
        let scores: Vec<(SymbolId, f64)> = node
            .children
            .iter()
            .map(|&(a, i)| (a, self.score_of(i, sibling_visits)))
            .collect();
        let min = scores.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return None;
        }
        let mut dist = vec![0.0; ACTION_SPACE];
        let mut total = 0.0;
        for &(a, s) in &scores {
            let w = s - min + 1e-6;
            dist[a as usize] = w;
            total += w;
        }
        for d in &mut dist {
            *d /= total;
        }
        Some(dist)
    }
}

/// Run one search episode over a series window.
///
/// `net` may be `None` only in the mode that never consults it. The episode
/// repeats select/expand/simulate/backpropagate for the configured budget
/// and extracts the max-visit backbone at the end. Training tuples pair the
/// expansion state's path with the final normalized score distribution over
/// its children and the simulated reward observed from it.
pub fn run_episode<R: Rng>(
    series: &TimeSeries,
    cfg: &SearchConfig,
    reward_cfg: &RewardConfig,
    fit_cfg: &FitConfig,
    net: Option<&PolicyValueNet>,
    lib: &FunctionLibrary,
    rng: &mut R,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    if cfg.mode.needs_net() && net.is_none() {
        return Err(Error::Config(format!(
            "mode {} requires network weights",
            cfg.mode
        )));
    }
    let mut tree = SearchTree::new(cfg, lib);
    let mut stats = SearchStats::default();
    let mut rollouts = Vec::new();
    // (expansion state, reward simulated from its new child)
    let mut expansion_records: Vec<(usize, f64)> = Vec::new();

    for _ in 0..cfg.iterations_per_episode {
        let selected = tree.select(0);
        let (sim_node, expanded_from) = if !tree.nodes[selected].untried.is_empty()
            && tree.nodes[selected].path.len() < cfg.max_path_length
        {
            let child = tree.expand(selected, net, series, rng)?;
            (child, Some(selected))
        } else {
            (selected, None)
        };
        let reward = tree.simulate(
            sim_node,
            series,
            net,
            reward_cfg,
            fit_cfg,
            &mut stats,
            &mut rollouts,
            rng,
        )?;
        tree.backpropagate(sim_node, reward)?;
        if let Some(parent) = expanded_from {
            expansion_records.push((parent, reward));
        }
    }

    let examples = if cfg.mode.uses_value_estimate() {
        Vec::new()
    } else {
        expansion_records
            .into_iter()
            .filter_map(|(idx, reward)| {
                tree.score_distribution(idx).map(|dist| TrainingExample {
                    path_tokens: tree.nodes[idx].path.tokens().to_vec(),
                    series_window: series.values().to_vec(),
                    target_policy: dist,
                    target_reward: reward,
                })
            })
            .collect()
    };

    Ok(EpisodeResult {
        backbone: tree.backbone(),
        stats,
        examples,
        rollouts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{mine_top_k, PatternRecorder};
    use crate::pvnet::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series_linear(n: usize) -> TimeSeries {
        TimeSeries::from_values((0..n).map(|i| i as f64).collect()).unwrap()
    }

    fn rollout_cfg(iterations: usize) -> SearchConfig {
        SearchConfig {
            mode: SearchMode::NoPvn,
            iterations_per_episode: iterations,
            max_path_length: 8,
            ..SearchConfig::default()
        }
    }

    fn cheap_fit() -> FitConfig {
        let mut fit = FitConfig::default();
        fit.n_restarts = 0;
        fit.powell.max_outer = 10;
        fit
    }

    #[test]
    fn puct_worked_examples() {
        // Q=0.5 (1.5/3), P=0.25, sibling total 16, c=1.
        let got = puct_score(1.5, 3, 0.25, 16, 1.0);
        assert!((got - 0.75).abs() < 1e-12);
        // Unvisited child.
        let got = puct_score(0.0, 0, 0.5, 9, 1.0);
        assert!((got - 1.5).abs() < 1e-12);
        // c = 0 leaves pure exploitation.
        assert_eq!(puct_score(1.5, 3, 0.25, 16, 0.0), 0.5);
    }

    #[test]
    fn ucb_worked_examples() {
        let got = ucb_score(1.5, 3, 16, 1.0);
        let want = 0.5 + (16.0f64.ln() / 4.0).sqrt();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 1.3326).abs() < 1e-4);
        // ln(1) = 0 removes the bonus entirely.
        assert_eq!(ucb_score(0.5, 0, 1, 1.0), 0.5);
        assert_eq!(ucb_score(1.5, 3, 16, 0.0), 0.5);
    }

    #[test]
    fn fresh_root_is_selected_and_has_all_actions_untried() {
        let lib = FunctionLibrary::standard();
        let cfg = rollout_cfg(1);
        let tree = SearchTree::new(&cfg, &lib);
        assert_eq!(tree.select(0), 0);
        assert_eq!(tree.nodes[0].untried.len(), 12);
    }

    #[test]
    fn selection_breaks_ties_toward_the_lowest_action_id() {
        let lib = FunctionLibrary::standard();
        let cfg = rollout_cfg(1);
        let mut tree = SearchTree::new(&cfg, &lib);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let series = series_linear(6);
        // Expand every root action, then hand all children identical stats.
        while !tree.nodes[0].untried.is_empty() {
            tree.expand(0, None, &series, &mut rng).unwrap();
        }
        let child_indices: Vec<usize> = tree.nodes[0].children.iter().map(|&(_, i)| i).collect();
        for &i in &child_indices {
            tree.nodes[i].n_visits = 2;
            tree.nodes[i].q_total = 1.0;
        }
        let picked = tree.select(0);
        let (lowest_action, lowest) = tree.nodes[0].children[0];
        assert_eq!(picked, lowest);
        assert_eq!(lowest_action, 0);
    }

    #[test]
    fn expansion_initializes_child_stats_to_zero() {
        let lib = FunctionLibrary::standard();
        let cfg = rollout_cfg(1);
        let mut tree = SearchTree::new(&cfg, &lib);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let series = series_linear(6);
        let before = tree.nodes[0].untried.len();
        let child = tree.expand(0, None, &series, &mut rng).unwrap();
        assert_eq!(tree.nodes[child].n_visits, 0);
        assert_eq!(tree.nodes[child].q_total, 0.0);
        assert_eq!(tree.nodes[0].untried.len(), before - 1);
        assert_eq!(tree.nodes[0].children.len(), 1);
        // Uniform prior over the 12 eligible root actions.
        assert!((tree.nodes[child].prior - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_errors_cover_exhaustion_and_terminality() {
        let lib = FunctionLibrary::standard();
        let cfg = rollout_cfg(1);
        let mut tree = SearchTree::new(&cfg, &lib);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let series = series_linear(6);
        while !tree.nodes[0].untried.is_empty() {
            tree.expand(0, None, &series, &mut rng).unwrap();
        }
        assert!(matches!(
            tree.expand(0, None, &series, &mut rng),
            Err(Error::ExhaustedExpansion)
        ));
        // A complete path is terminal regardless of length.
        let complete = ExpressionPath::new().push_token(BaseToken::VarT).unwrap();
        let idx = tree.nodes.len();
        tree.nodes.push(Node {
            path: complete,
            q_total: 0.0,
            n_visits: 0,
            prior: 1.0,
            children: Vec::new(),
            untried: Vec::new(),
            eligible_count: 0,
            parent: Some(0),
            priors: None,
        });
        assert!(matches!(
            tree.expand(idx, None, &series, &mut rng),
            Err(Error::TerminalNode(_))
        ));
    }

    #[test]
    fn backpropagation_updates_the_whole_chain() {
        let lib = FunctionLibrary::standard();
        let cfg = rollout_cfg(1);
        let mut tree = SearchTree::new(&cfg, &lib);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let series = series_linear(6);
        let child = tree.expand(0, None, &series, &mut rng).unwrap();
        let grandchild = tree.expand(child, None, &series, &mut rng).unwrap();
        tree.backpropagate(grandchild, 0.6).unwrap();
        tree.backpropagate(grandchild, 0.2).unwrap();
        for idx in [0, child, grandchild] {
            assert_eq!(tree.nodes[idx].n_visits, 2);
            assert!((tree.nodes[idx].q_total - 0.8).abs() < 1e-12);
        }
        assert!(matches!(
            tree.backpropagate(child, 1.2),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn q_total_never_exceeds_visits() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(10);
        let cfg = rollout_cfg(40);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Re-run internally to inspect the tree.
        let mut tree = SearchTree::new(&cfg, &lib);
        let mut stats = SearchStats::default();
        let mut rollouts = Vec::new();
        let reward_cfg = RewardConfig::default();
        let fit_cfg = cheap_fit();
        for _ in 0..cfg.iterations_per_episode {
            let sel = tree.select(0);
            let node = if !tree.nodes[sel].untried.is_empty() {
                tree.expand(sel, None, &series, &mut rng).unwrap()
            } else {
                sel
            };
            let r = tree
                .simulate(
                    node,
                    &series,
                    None,
                    &reward_cfg,
                    &fit_cfg,
                    &mut stats,
                    &mut rollouts,
                    &mut rng,
                )
                .unwrap();
            tree.backpropagate(node, r).unwrap();
        }
        for node in &tree.nodes {
            assert!(node.q_total <= node.n_visits as f64 + 1e-9);
        }
        // Visit decomposition at the root: children absorb every iteration.
        let child_sum: u64 = tree.nodes[0]
            .children
            .iter()
            .map(|&(_, i)| tree.nodes[i].n_visits)
            .sum();
        assert_eq!(child_sum, tree.nodes[0].n_visits);
        assert_eq!(tree.nodes[0].n_visits, cfg.iterations_per_episode as u64);
    }

    #[test]
    fn huge_exploration_constant_round_robins_equal_priors() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(8);
        let cfg = SearchConfig {
            mode: SearchMode::NoPvn,
            c: 1e9,
            iterations_per_episode: 36,
            max_path_length: 3,
            ..SearchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tree = SearchTree::new(&cfg, &lib);
        let mut stats = SearchStats::default();
        let mut rollouts = Vec::new();
        let reward_cfg = RewardConfig::default();
        let fit_cfg = cheap_fit();
        for _ in 0..cfg.iterations_per_episode {
            let sel = tree.select(0);
            let node = if !tree.nodes[sel].untried.is_empty() {
                tree.expand(sel, None, &series, &mut rng).unwrap()
            } else {
                sel
            };
            let r = tree
                .simulate(
                    node,
                    &series,
                    None,
                    &reward_cfg,
                    &fit_cfg,
                    &mut stats,
                    &mut rollouts,
                    &mut rng,
                )
                .unwrap();
            tree.backpropagate(node, r).unwrap();
        }
        let visits: Vec<u64> = tree.nodes[0]
            .children
            .iter()
            .map(|&(_, i)| tree.nodes[i].n_visits)
            .collect();
        let max = *visits.iter().max().unwrap();
        let min = *visits.iter().min().unwrap();
        assert!(max - min <= 1, "visits spread {visits:?}");
    }

    #[test]
    fn episode_is_deterministic_and_returns_a_complete_backbone() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(12);
        let cfg = rollout_cfg(30);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(
                &series,
                &cfg,
                &RewardConfig::default(),
                &cheap_fit(),
                None,
                &lib,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.backbone, b.backbone);
        assert_eq!(a.stats.simulation_steps, b.stats.simulation_steps);
        assert!(a.backbone.is_complete());
        assert!(a.backbone.len() <= cfg.max_path_length);
        let c = run(8);
        // Different seed is allowed to differ (and practically does).
        let _ = c;
    }

    #[test]
    fn single_iteration_backbone_is_the_one_expanded_path() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(8);
        let cfg = rollout_cfg(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = run_episode(
            &series,
            &cfg,
            &RewardConfig::default(),
            &cheap_fit(),
            None,
            &lib,
            &mut rng,
        )
        .unwrap();
        assert!(out.backbone.is_complete());
        // One iteration expands exactly one root child; the backbone starts
        // with that child's action.
        assert!(!out.backbone.is_empty());
    }

    #[test]
    fn value_mode_counts_one_step_per_iteration() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(12);
        let net = PolicyValueNet::new(NetConfig {
            embed_dim: 4,
            hidden_dim: 6,
            window: 12,
            seed: 0,
        });
        for mode in [SearchMode::Full, SearchMode::NoPolicySelector] {
            let cfg = SearchConfig {
                mode,
                iterations_per_episode: 25,
                max_path_length: 8,
                ..SearchConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let out = run_episode(
                &series,
                &cfg,
                &RewardConfig::default(),
                &cheap_fit(),
                Some(&net),
                &lib,
                &mut rng,
            )
            .unwrap();
            assert_eq!(out.stats.simulation_steps, 25);
            assert!(out.examples.is_empty());
            assert!(out.rollouts.is_empty());
        }
    }

    #[test]
    fn rollout_mode_bounds_steps_by_the_length_budget() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(12);
        let cfg = SearchConfig {
            mode: SearchMode::NoPvn,
            iterations_per_episode: 30,
            max_path_length: 20,
            rollout_steps: 200,
            ..SearchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let out = run_episode(
            &series,
            &cfg,
            &RewardConfig::default(),
            &cheap_fit(),
            None,
            &lib,
            &mut rng,
        )
        .unwrap();
        let bound = cfg.iterations_per_episode as u64 * (cfg.max_path_length as u64 + 1);
        assert!(out.stats.simulation_steps <= bound);
        assert!(out.stats.simulation_steps > 0);
        // Rollouts are recorded complete with in-range rewards.
        assert!(!out.rollouts.is_empty());
        for (p, r) in &out.rollouts {
            assert!(p.is_complete());
            assert!((0.0..=1.0).contains(r));
        }
    }

    #[test]
    fn rollout_mode_produces_training_examples_with_valid_targets() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(12);
        let cfg = rollout_cfg(40);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out = run_episode(
            &series,
            &cfg,
            &RewardConfig::default(),
            &cheap_fit(),
            None,
            &lib,
            &mut rng,
        )
        .unwrap();
        assert!(!out.examples.is_empty());
        for ex in &out.examples {
            assert_eq!(ex.target_policy.len(), ACTION_SPACE);
            let sum: f64 = ex.target_policy.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(ex.target_policy.iter().all(|&p| p >= 0.0));
            assert!((0.0..=1.0).contains(&ex.target_reward));
            assert!(ex.series_window == series.values());
        }
    }

    #[test]
    fn modes_that_need_weights_reject_a_missing_net() {
        let lib = FunctionLibrary::standard();
        let series = series_linear(8);
        for mode in [
            SearchMode::Full,
            SearchMode::NoPolicySelector,
            SearchMode::NoRewardEstimator,
        ] {
            let cfg = SearchConfig {
                mode,
                iterations_per_episode: 2,
                ..SearchConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let got = run_episode(
                &series,
                &cfg,
                &RewardConfig::default(),
                &cheap_fit(),
                None,
                &lib,
                &mut rng,
            );
            assert!(matches!(got, Err(Error::Config(_))), "mode {mode}");
        }
    }

    #[test]
    fn augmented_expansion_inlines_the_sampled_pattern() {
        let mut rec = PatternRecorder::new(0.0, 5);
        let mut pattern = ExpressionPath::new();
        for tok in [BaseToken::Sin, BaseToken::VarT] {
            pattern = pattern.push_token(tok).unwrap();
        }
        rec.record(&pattern, 0.9).unwrap();
        let lib = mine_top_k(&rec, &FunctionLibrary::standard());
        let cfg = rollout_cfg(1);
        let mut tree = SearchTree::new(&cfg, &lib);
        // 12 base actions + the augmented token.
        assert_eq!(tree.nodes[0].untried.len(), 13);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let series = series_linear(6);
        // Expand until the augmented action comes up.
        while !tree.nodes[0].untried.is_empty() {
            tree.expand(0, None, &series, &mut rng).unwrap();
        }
        let &(_, idx) = tree.nodes[0]
            .children
            .iter()
            .find(|&&(a, _)| a == AUGMENTED_TOKEN)
            .expect("augmented action expanded");
        assert_eq!(tree.nodes[idx].path.tokens(), pattern.tokens());
        assert!(tree.nodes[idx].path.is_complete());
    }

    #[test]
    fn length_budget_excludes_oversized_patterns() {
        let mut rec = PatternRecorder::new(0.0, 5);
        // Pattern of length 5: add(sin(t), cos(t)).
        let mut long = ExpressionPath::new();
        for tok in [
            BaseToken::Add,
            BaseToken::Sin,
            BaseToken::VarT,
            BaseToken::Cos,
            BaseToken::VarT,
        ] {
            long = long.push_token(tok).unwrap();
        }
        rec.record(&long, 0.9).unwrap();
        let lib = mine_top_k(&rec, &FunctionLibrary::standard());
        let path = ExpressionPath::new();
        // Budget 4 cannot host the 5-token pattern anywhere.
        let actions = eligible_actions(&path, &lib, 4);
        assert!(!actions.contains(&AUGMENTED_TOKEN));
        // Budget 5 admits it at the root.
        let actions = eligible_actions(&path, &lib, 5);
        assert!(actions.contains(&AUGMENTED_TOKEN));
    }

    #[test]
    fn eligibility_respects_the_arity_completion_bound() {
        let lib = FunctionLibrary::standard();
        // Empty path with budget 3: binary ops fit exactly (3 = 0+1+2),
        // unary fit (2), terminals fit (1).
        let empty = ExpressionPath::new();
        assert_eq!(eligible_actions(&empty, &lib, 3).len(), 12);
        // After one binary op (len 1, open 2): another binary needs
        // 1+2+2 = 5 > 4, unary needs 4, terminals need 3.
        let after_add = empty.push_token(BaseToken::Add).unwrap();
        let acts = eligible_actions(&after_add, &lib, 4);
        assert!(!acts.contains(&BaseToken::Add.id()));
        assert!(acts.contains(&BaseToken::Sin.id()));
        assert!(acts.contains(&BaseToken::VarT.id()));
        // Complete path: nothing is eligible.
        let done = empty.push_token(BaseToken::VarT).unwrap();
        assert!(eligible_actions(&done, &lib, 8).is_empty());
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [
            SearchMode::Full,
            SearchMode::NoPolicySelector,
            SearchMode::NoRewardEstimator,
            SearchMode::NoPvn,
        ] {
            assert_eq!(mode.as_str().parse::<SearchMode>().unwrap(), mode);
        }
        assert!("nope".parse::<SearchMode>().is_err());
    }

    #[test]
    fn config_validation_rejects_degenerate_budgets() {
        let mut cfg = SearchConfig::default();
        cfg.max_path_length = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.rollout_steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.c = -1.0;
        assert!(cfg.validate().is_err());
        assert!(SearchConfig::default().validate().is_ok());
    }
}
