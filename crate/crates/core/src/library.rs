//! Function library: the twelve base tokens, mined high-reward composite
//! patterns ("augmented entries"), and the samplers over them.
//!
//! The expansion sampler only ever sees one extra action beyond the base
//! tokens: the augmented token. Drawing it triggers a secondary,
//! count-proportional sample over the concrete mined patterns, whose token
//! sequence is then inlined into the path.

use crate::error::{Error, Result};
use crate::expr::{
    BaseToken, ExpressionPath, Symbol, SymbolId, SymbolKind, AUGMENTED_TOKEN,
    FIRST_AUGMENTED_ENTRY_ID,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// One mined composite pattern. `mean_reward` is `reward_sum / count` of the
/// simulations that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub id: SymbolId,
    pub pattern: ExpressionPath,
    pub count: u64,
    pub mean_reward: f64,
}

/// Base symbols plus mined augmented entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    base_symbols: Vec<Symbol>,
    augmented_entries: Vec<AugmentedEntry>,
    has_augmented_token: bool,
}

impl Default for FunctionLibrary {
    fn default() -> Self {
        Self::standard()
    }
}

impl FunctionLibrary {
    /// The standard library over the full base grammar. Power is only
    /// representable with a constant exponent; an expression-valued exponent
    /// has no token, so it cannot be constructed at all.
    pub fn standard() -> FunctionLibrary {
        FunctionLibrary {
            base_symbols: BaseToken::ALL.iter().map(|&t| Symbol::base(t)).collect(),
            augmented_entries: Vec::new(),
            has_augmented_token: false,
        }
    }

    pub fn base_symbols(&self) -> &[Symbol] {
        &self.base_symbols
    }

    pub fn augmented_entries(&self) -> &[AugmentedEntry] {
        &self.augmented_entries
    }

    pub fn has_augmented_token(&self) -> bool {
        self.has_augmented_token
    }

    /// The augmented token's sampler-facing descriptor. Arity 0: the token
    /// stands for a complete subexpression.
    pub fn augmented_symbol() -> Symbol {
        Symbol {
            id: AUGMENTED_TOKEN,
            arity: 0,
            kind: SymbolKind::Augmented,
            name: "aug".to_string(),
        }
    }

    /// Every symbol the expansion sampler may draw: the base set, plus the
    /// augmented token when entries exist.
    pub fn eligible_symbols(&self) -> Vec<Symbol> {
        let mut out = self.base_symbols.clone();
        if self.has_augmented_token {
            out.push(Self::augmented_symbol());
        }
        out
    }

    /// Uniform draw over eligible symbols.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Result<Symbol> {
        self.sample_uniform_where(rng, |_| true)
    }

    /// Uniform draw over the eligible symbols that pass `keep`. Callers use
    /// the filter to exclude symbols whose arity would blow the length
    /// budget.
    pub fn sample_uniform_where<R: Rng, F: Fn(&Symbol) -> bool>(
        &self,
        rng: &mut R,
        keep: F,
    ) -> Result<Symbol> {
        let pool: Vec<Symbol> = self
            .eligible_symbols()
            .into_iter()
            .filter(|s| keep(s))
            .collect();
        if pool.is_empty() {
            return Err(Error::ExhaustedLibrary("no eligible symbols".into()));
        }
        let idx = rng.gen_range(0..pool.len());
        Ok(pool[idx].clone())
    }

    /// Count-proportional draw over the augmented entries.
    pub fn secondary_sample<R: Rng>(&self, rng: &mut R) -> Result<&AugmentedEntry> {
        if self.augmented_entries.is_empty() {
            return Err(Error::ExhaustedLibrary("no augmented entries".into()));
        }
        let total: u64 = self.augmented_entries.iter().map(|e| e.count).sum();
        debug_assert!(total > 0);
        let mut ticket = rng.gen_range(0..total);
        for entry in &self.augmented_entries {
            if ticket < entry.count {
                return Ok(entry);
            }
            ticket -= entry.count;
        }
        unreachable!("ticket below total count")
    }

    /// Replace the augmented entries wholesale, re-numbering ids from
    /// [`FIRST_AUGMENTED_ENTRY_ID`]. Entry order is preserved.
    fn with_augmented(&self, patterns: Vec<(ExpressionPath, u64, f64)>) -> FunctionLibrary {
        let augmented_entries: Vec<AugmentedEntry> = patterns
            .into_iter()
            .enumerate()
            .map(|(i, (pattern, count, mean_reward))| AugmentedEntry {
                id: FIRST_AUGMENTED_ENTRY_ID + i as SymbolId,
                pattern,
                count,
                mean_reward,
            })
            .collect();
        FunctionLibrary {
            base_symbols: self.base_symbols.clone(),
            has_augmented_token: !augmented_entries.is_empty(),
            augmented_entries,
        }
    }

    /// Versioned text form; field order is fixed so files diff cleanly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("function-library v1\n");
        for s in &self.base_symbols {
            let _ = writeln!(out, "base {} {} {}", s.id, s.name, s.arity);
        }
        for e in &self.augmented_entries {
            let _ = writeln!(
                out,
                "augmented {} | {} | {} | {}",
                e.id,
                e.pattern.to_id_string(),
                e.count,
                e.mean_reward
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<FunctionLibrary> {
        let mut lines = text.lines();
        match lines.next() {
            Some("function-library v1") => {}
            other => {
                return Err(Error::Format(format!(
                    "bad library header: {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut base_symbols = Vec::new();
        let mut augmented_entries = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("base ") {
                let mut parts = rest.split_whitespace();
                let id: SymbolId = parse_field(parts.next(), "base id")?;
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Format("base line missing name".into()))?;
                let arity: u8 = parse_field(parts.next(), "base arity")?;
                let tok = BaseToken::from_id(id)
                    .ok_or_else(|| Error::Format(format!("unknown base symbol id {id}")))?;
                if tok.name() != name || tok.arity() != arity {
                    return Err(Error::Format(format!(
                        "base symbol {id} does not match the grammar"
                    )));
                }
                base_symbols.push(Symbol::base(tok));
            } else if let Some(rest) = line.strip_prefix("augmented ") {
                let fields: Vec<&str> = rest.split('|').map(str::trim).collect();
                if fields.len() != 4 {
                    return Err(Error::Format(format!(
                        "augmented line needs 4 fields, got {}",
                        fields.len()
                    )));
                }
                let id: SymbolId = parse_field(Some(fields[0]), "augmented id")?;
                let pattern = ExpressionPath::from_id_string(fields[1])?;
                let count: u64 = parse_field(Some(fields[2]), "augmented count")?;
                let mean_reward: f64 = parse_field(Some(fields[3]), "augmented mean reward")?;
                if !pattern.is_complete() || pattern.len() < 2 {
                    return Err(Error::Format(format!(
                        "augmented entry {id} pattern is not a complete composite"
                    )));
                }
                if count == 0 || !(0.0..=1.0).contains(&mean_reward) {
                    return Err(Error::Format(format!(
                        "augmented entry {id} has invalid statistics"
                    )));
                }
                augmented_entries.push(AugmentedEntry {
                    id,
                    pattern,
                    count,
                    mean_reward,
                });
            } else {
                return Err(Error::Format(format!("unrecognized library line: {line}")));
            }
        }
        if base_symbols.len() != BaseToken::ALL.len() {
            return Err(Error::Format(format!(
                "library lists {} base symbols, expected {}",
                base_symbols.len(),
                BaseToken::ALL.len()
            )));
        }
        Ok(FunctionLibrary {
            has_augmented_token: !augmented_entries.is_empty(),
            base_symbols,
            augmented_entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FunctionLibrary> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad {what} field")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct PatternStats {
    count: u64,
    reward_sum: f64,
}

/// Accumulates high-reward simulation paths for later mining. Keys are the
/// token-id sequences themselves: coefficient values never enter a path, so
/// structurally identical expressions with different constants already share
/// a key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternRecorder {
    pattern_stats: BTreeMap<Vec<SymbolId>, PatternStats>,
    pub reward_threshold: f64,
    pub k: usize,
}

impl Default for PatternRecorder {
    fn default() -> Self {
        PatternRecorder::new(0.5, 10)
    }
}

impl PatternRecorder {
    pub fn new(reward_threshold: f64, k: usize) -> PatternRecorder {
        PatternRecorder {
            pattern_stats: BTreeMap::new(),
            reward_threshold,
            k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pattern_stats.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pattern_stats.len()
    }

    /// Record one completed simulation. Below-threshold rewards leave the
    /// stats untouched.
    pub fn record(&mut self, path: &ExpressionPath, reward: f64) -> Result<()> {
        if !path.is_complete() {
            return Err(Error::Grammar("only complete paths may be recorded".into()));
        }
        debug_assert!(
            (0.0..=1.0).contains(&reward),
            "reward {reward} out of range"
        );
        if reward < self.reward_threshold {
            return Ok(());
        }
        let stats = self
            .pattern_stats
            .entry(path.tokens().to_vec())
            .or_default();
        stats.count += 1;
        stats.reward_sum += reward;
        Ok(())
    }

    /// Stats for one pattern, mostly for tests and reporting.
    pub fn stats(&self, tokens: &[SymbolId]) -> Option<(u64, f64)> {
        self.pattern_stats
            .get(tokens)
            .map(|s| (s.count, s.reward_sum / s.count as f64))
    }

    /// Iterate all recorded patterns as (tokens, count, mean reward).
    pub fn patterns(&self) -> impl Iterator<Item = (&[SymbolId], u64, f64)> {
        self.pattern_stats
            .iter()
            .map(|(k, s)| (k.as_slice(), s.count, s.reward_sum / s.count as f64))
    }
}

/// Build a library whose augmented entries are the recorder's top-k patterns
/// by count (ties: higher mean reward, then lexicographically smaller key).
/// Existing augmented entries are replaced, so mining twice from the same
/// recorder is idempotent. Single-token paths are never eligible.
pub fn mine_top_k(rec: &PatternRecorder, lib: &FunctionLibrary) -> FunctionLibrary {
    let mut ranked: Vec<(&Vec<SymbolId>, &PatternStats)> = rec
        .pattern_stats
        .iter()
        .filter(|(key, _)| key.len() >= 2)
        .collect();
    ranked.sort_by(|(ka, sa), (kb, sb)| {
        sb.count
            .cmp(&sa.count)
            .then_with(|| {
                let ma = sa.reward_sum / sa.count as f64;
                let mb = sb.reward_sum / sb.count as f64;
                mb.partial_cmp(&ma).expect("finite mean rewards")
            })
            .then_with(|| ka.cmp(kb))
    });
    let top: Vec<(ExpressionPath, u64, f64)> = ranked
        .into_iter()
        .take(rec.k)
        .map(|(key, stats)| {
            let pattern = ExpressionPath::from_tokens(key)
                .expect("recorded keys are validated complete paths");
            (pattern, stats.count, stats.reward_sum / stats.count as f64)
        })
        .collect();
    lib.with_augmented(top)
}
