//! Policy-value network guiding the search.
//!
//! Two encoders feed one trunk: an LSTM reads the expression path as
//! embedded tokens, a dilated causal convolution stack reads the series
//! window. Their final states are concatenated through two fully connected
//! ReLU layers into a softmax policy head over the action space and a
//! logistic value head estimating the simulation reward.
//!
//! Everything is plain `f64` on a single flat parameter vector; gradients
//! are hand-derived backpropagation checked against central finite
//! differences in the tests.

mod lstm;
mod tcn;

use crate::error::{Error, Result};
use crate::expr::{SymbolId, ACTION_SPACE};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

const TRUNK_LAYERS: u32 = 2;
const TCN_LEVELS: u32 = 3;
const WEIGHTS_MAGIC: &[u8; 8] = b"SYMTSNET";
const WEIGHTS_VERSION: u32 = 1;
/// Logistic pre-activations are clamped here so the output stays strictly
/// inside (0,1) in f64.
const SIGMOID_CLAMP: f64 = 36.0;

/// Architecture parameters. `window` is the series length the encoder
/// consumes; shorter inputs are left-padded with their first value, longer
/// ones keep their most recent `window` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            embed_dim: 16,
            hidden_dim: 32,
            window: 36,
            seed: 0,
        }
    }
}

/// Optimization parameters for [`PolicyValueNet::train_step`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the policy (distribution-matching) loss term.
    pub theta1: f64,
    /// Weight of the value (reward-regression) loss term.
    pub theta2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Swap the divergence direction of the policy loss (target-led instead
    /// of prior-led).
    pub reverse_kl: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            theta1: 1.0,
            theta2: 1.0,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 5,
            reverse_kl: false,
        }
    }
}

/// One supervision tuple generated by the search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingExample {
    pub path_tokens: Vec<SymbolId>,
    pub series_window: Vec<f64>,
    /// Distribution over the action space derived from search scores.
    pub target_policy: Vec<f64>,
    /// Simulated reward in [0,1].
    pub target_reward: f64,
}

/// Loss report of one training step, measured before the update.
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
}

/// Offsets of each block in the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    embed: Range<usize>,
    lstm_wx: Range<usize>,
    lstm_wh: Range<usize>,
    lstm_b: Range<usize>,
    tcn: Range<usize>,
    fc1_w: Range<usize>,
    fc1_b: Range<usize>,
    fc2_w: Range<usize>,
    fc2_b: Range<usize>,
    pol_w: Range<usize>,
    pol_b: Range<usize>,
    val_w: Range<usize>,
    val_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(d: usize, h: usize) -> Layout {
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let embed = take(ACTION_SPACE * d);
        let lstm_wx = take(4 * h * d);
        let lstm_wh = take(4 * h * h);
        let lstm_b = take(4 * h);
        let tcn = take(tcn::param_len(h));
        let fc1_w = take(h * 2 * h);
        let fc1_b = take(h);
        let fc2_w = take(h * h);
        let fc2_b = take(h);
        let pol_w = take(ACTION_SPACE * h);
        let pol_b = take(ACTION_SPACE);
        let val_w = take(h);
        let val_b = take(1);
        Layout {
            embed,
            lstm_wx,
            lstm_wh,
            lstm_b,
            tcn,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            pol_w,
            pol_b,
            val_w,
            val_b,
            total: at,
        }
    }
}

struct ForwardCache {
    tokens: Vec<SymbolId>,
    lstm: lstm::LstmCache,
    tcn: tcn::TcnCache,
    concat: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    policy: Vec<f64>,
    value: f64,
}

pub struct PolicyValueNet {
    cfg: NetConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PolicyValueNet {
    /// Fresh network. Encoder and trunk weights are seeded uniform draws
    /// scaled by fan-in; both heads start at zero, so the initial policy is
    /// exactly uniform and the initial value estimate is exactly 0.5.
    pub fn new(cfg: NetConfig) -> PolicyValueNet {
        assert!(cfg.embed_dim >= 1 && cfg.hidden_dim >= 1 && cfg.window >= 1);
        let d = cfg.embed_dim;
        let h = cfg.hidden_dim;
        let layout = Layout::new(d, h);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fill = |range: Range<usize>, scale: f64, params: &mut Vec<f64>| {
            for p in &mut params[range] {
                *p = rng.gen_range(-scale..=scale);
            }
        };
        fill(layout.embed.clone(), 0.1, &mut params);
        fill(layout.lstm_wx.clone(), 1.0 / (d as f64).sqrt(), &mut params);
        fill(layout.lstm_wh.clone(), 1.0 / (h as f64).sqrt(), &mut params);
        // Forget-gate biases start at 1 so early training does not wash out
        // the cell state.
        for j in 0..h {
            params[layout.lstm_b.start + h + j] = 1.0;
        }
        let mut offset = layout.tcn.start;
        for (in_ch, out_ch, _) in tcn::level_specs(h) {
            let wlen = out_ch * in_ch * tcn::KERNEL;
            let scale = 1.0 / ((in_ch * tcn::KERNEL) as f64).sqrt();
            fill(offset..offset + wlen, scale, &mut params);
            offset += wlen + out_ch; // biases stay zero
        }
        fill(
            layout.fc1_w.clone(),
            1.0 / ((2 * h) as f64).sqrt(),
            &mut params,
        );
        fill(layout.fc2_w.clone(), 1.0 / (h as f64).sqrt(), &mut params);
        // Policy and value heads stay zero.
        PolicyValueNet {
            cfg,
            layout,
            params,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Raw parameter access, for inspection and gradient testing.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Pad/trim to the configured window and standardize to zero mean, unit
    /// variance. Standardization is internal to the encoder: reward
    /// arithmetic elsewhere always sees raw values.
    fn prepare_window(&self, series: &[f64]) -> Result<Vec<f64>> {
        if series.is_empty() {
            return Err(Error::Shape("empty series window".into()));
        }
        let w = self.cfg.window;
        let mut win = Vec::with_capacity(w);
        if series.len() >= w {
            win.extend_from_slice(&series[series.len() - w..]);
        } else {
            win.extend(std::iter::repeat(series[0]).take(w - series.len()));
            win.extend_from_slice(series);
        }
        let n = w as f64;
        let mean = win.iter().sum::<f64>() / n;
        let std = (win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let std = if std < 1e-12 { 1.0 } else { std };
        for v in &mut win {
            *v = (*v - mean) / std;
        }
        Ok(win)
    }

    fn embed_tokens(&self, tokens: &[SymbolId]) -> Result<Vec<Vec<f64>>> {
        let d = self.cfg.embed_dim;
        let table = &self.params[self.layout.embed.clone()];
        tokens
            .iter()
            .map(|&tok| {
                if (tok as usize) >= ACTION_SPACE {
                    return Err(Error::Vocabulary(tok));
                }
                let row = tok as usize * d;
                Ok(table[row..row + d].to_vec())
            })
            .collect()
    }

    fn forward_cached(&self, path: &[SymbolId], series: &[f64]) -> Result<ForwardCache> {
        let d = self.cfg.embed_dim;
        let h = self.cfg.hidden_dim;
        let p = &self.params;
        let l = &self.layout;

        let inputs = self.embed_tokens(path)?;
        let (path_code, lstm_cache) = lstm::forward(
            &p[l.lstm_wx.clone()],
            &p[l.lstm_wh.clone()],
            &p[l.lstm_b.clone()],
            &inputs,
            d,
            h,
        );
        let window = self.prepare_window(series)?;
        let (series_code, tcn_cache) = tcn::forward(&p[l.tcn.clone()], &window, h);

        let mut concat = path_code;
        concat.extend_from_slice(&series_code);

        let z1 = affine(&p[l.fc1_w.clone()], &p[l.fc1_b.clone()], &concat, h);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let z2 = affine(&p[l.fc2_w.clone()], &p[l.fc2_b.clone()], &a1, h);
        let a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();

        let logits = affine(&p[l.pol_w.clone()], &p[l.pol_b.clone()], &a2, ACTION_SPACE);
        let policy = softmax(&logits);
        let u = dot(&p[l.val_w.clone()], &a2) + p[l.val_b.start];
        let value = sigmoid(u.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP));

        Ok(ForwardCache {
            tokens: path.to_vec(),
            lstm: lstm_cache,
            tcn: tcn_cache,
            concat,
            z1,
            a1,
            z2,
            a2,
            policy,
            value,
        })
    }

    /// Prior distribution over the action space and a reward estimate in
    /// (0,1) for the given search state.
    pub fn forward(&self, path: &[SymbolId], series: &[f64]) -> Result<(Vec<f64>, f64)> {
        let cache = self.forward_cached(path, series)?;
        Ok((cache.policy, cache.value))
    }

    fn backward(&self, cache: &ForwardCache, dlogits: &[f64], dvalue: f64, grads: &mut [f64]) {
        let d = self.cfg.embed_dim;
        let h = self.cfg.hidden_dim;
        let p = &self.params;
        let l = &self.layout;

        let mut da2 = vec![0.0; h];
        // Value head; the logistic derivative at the clamp edge is ~1e-16,
        // indistinguishable from the true zero.
        let du = dvalue * cache.value * (1.0 - cache.value);
        grads[l.val_b.start] += du;
        for j in 0..h {
            grads[l.val_w.start + j] += du * cache.a2[j];
            da2[j] += p[l.val_w.start + j] * du;
        }
        // Policy head.
        for a in 0..ACTION_SPACE {
            let dz = dlogits[a];
            if dz == 0.0 {
                continue;
            }
            grads[l.pol_b.start + a] += dz;
            for j in 0..h {
                grads[l.pol_w.start + a * h + j] += dz * cache.a2[j];
                da2[j] += p[l.pol_w.start + a * h + j] * dz;
            }
        }
        // Trunk.
        let dz2: Vec<f64> = (0..h)
            .map(|j| if cache.z2[j] > 0.0 { da2[j] } else { 0.0 })
            .collect();
        let mut da1 = vec![0.0; h];
        for (r, &dz) in dz2.iter().enumerate() {
            grads[l.fc2_b.start + r] += dz;
            for c in 0..h {
                grads[l.fc2_w.start + r * h + c] += dz * cache.a1[c];
                da1[c] += p[l.fc2_w.start + r * h + c] * dz;
            }
        }
        let dz1: Vec<f64> = (0..h)
            .map(|j| if cache.z1[j] > 0.0 { da1[j] } else { 0.0 })
            .collect();
        let mut dconcat = vec![0.0; 2 * h];
        for (r, &dz) in dz1.iter().enumerate() {
            grads[l.fc1_b.start + r] += dz;
            for c in 0..2 * h {
                grads[l.fc1_w.start + r * 2 * h + c] += dz * cache.concat[c];
                dconcat[c] += p[l.fc1_w.start + r * 2 * h + c] * dz;
            }
        }
        let (d_path, d_series) = dconcat.split_at(h);
        tcn::backward(
            &p[l.tcn.clone()],
            &cache.tcn,
            d_series,
            &mut grads[l.tcn.clone()],
            h,
        );
        let d_inputs = {
            let lstm_grads = &mut grads[l.lstm_wx.start..l.lstm_b.end];
            let (gwx, rest) = lstm_grads.split_at_mut(4 * h * d);
            let (gwh, gb) = rest.split_at_mut(4 * h * h);
            lstm::backward(
                &p[l.lstm_wx.clone()],
                &p[l.lstm_wh.clone()],
                &cache.lstm,
                d_path,
                gwx,
                gwh,
                gb,
                d,
                h,
            )
        };
        for (t, &tok) in cache.tokens.iter().enumerate() {
            let row = l.embed.start + tok as usize * d;
            for j in 0..d {
                grads[row + j] += d_inputs[t][j];
            }
        }
    }

    fn losses_and_grads(
        &self,
        batch: &[TrainingExample],
        cfg: &TrainConfig,
    ) -> Result<(StepLosses, Vec<f64>)> {
        let mut grads = vec![0.0; self.layout.total];
        let bn = batch.len() as f64;
        let mut sum_ps = 0.0;
        let mut sum_re = 0.0;
        for ex in batch {
            if ex.target_policy.len() != ACTION_SPACE {
                return Err(Error::Shape(format!(
                    "target policy has {} entries, expected {}",
                    ex.target_policy.len(),
                    ACTION_SPACE
                )));
            }
            let cache = self.forward_cached(&ex.path_tokens, &ex.series_window)?;
            let lps = if cfg.reverse_kl {
                loss_policy_reversed(&cache.policy, &ex.target_policy)?
            } else {
                loss_policy(&cache.policy, &ex.target_policy)?
            };
            let lre = loss_value(cache.value, ex.target_reward);
            sum_ps += lps;
            sum_re += lre;

            let scale_p = cfg.theta1 / bn;
            let mut dlogits = vec![0.0; ACTION_SPACE];
            if scale_p != 0.0 {
                if cfg.reverse_kl {
                    let tsum: f64 = ex.target_policy.iter().sum();
                    for (k, dl) in dlogits.iter_mut().enumerate() {
                        *dl = scale_p * (cache.policy[k] * tsum - ex.target_policy[k]);
                    }
                } else {
                    let gs: Vec<f64> = cache
                        .policy
                        .iter()
                        .zip(&ex.target_policy)
                        .map(|(&pk, &tk)| {
                            if pk > 0.0 {
                                (pk / tk.max(1e-12)).ln()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mean_g: f64 = cache.policy.iter().zip(&gs).map(|(&pk, &gk)| pk * gk).sum();
                    for (k, dl) in dlogits.iter_mut().enumerate() {
                        *dl = scale_p * cache.policy[k] * (gs[k] - mean_g);
                    }
                }
            }
            let dvalue = cfg.theta2 / bn * 2.0 * (cache.value - ex.target_reward);
            self.backward(&cache, &dlogits, dvalue, &mut grads);
        }
        let losses = StepLosses {
            total: cfg.theta1 * sum_ps / bn + cfg.theta2 * sum_re / bn,
            policy: sum_ps / bn,
            value: sum_re / bn,
        };
        Ok((losses, grads))
    }

    /// One stochastic-gradient update on the mean batch loss
    /// `theta1 * policy + theta2 * value`. Returns the losses measured
    /// before the update; a non-finite loss leaves the weights untouched.
    pub fn train_step(
        &mut self,
        batch: &[TrainingExample],
        cfg: &TrainConfig,
    ) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let (losses, grads) = self.losses_and_grads(batch, cfg)?;
        if !losses.total.is_finite() {
            return Err(Error::TrainingDivergence(format!(
                "batch loss is {}",
                losses.total
            )));
        }
        for (p, g) in self.params.iter_mut().zip(&grads) {
            *p -= cfg.learning_rate * g;
        }
        Ok(losses)
    }

    /// Versioned binary weights image: magic, architecture header, then the
    /// flat parameters as little-endian doubles. Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * 4 + 8 + 8 * self.params.len());
        out.extend_from_slice(WEIGHTS_MAGIC);
        for v in [
            WEIGHTS_VERSION,
            ACTION_SPACE as u32,
            self.cfg.embed_dim as u32,
            self.cfg.hidden_dim as u32,
            self.cfg.window as u32,
            TRUNK_LAYERS,
            TCN_LEVELS,
            tcn::KERNEL as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyValueNet> {
        let mut at = 0usize;
        let magic = take_bytes(bytes, &mut at, 8)?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::Format("bad weights magic".into()));
        }
        let version = read_u32(bytes, &mut at)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weights version {version}"
            )));
        }
        let action_space = read_u32(bytes, &mut at)? as usize;
        if action_space != ACTION_SPACE {
            return Err(Error::Format(format!(
                "weights built for action space {action_space}, engine uses {ACTION_SPACE}"
            )));
        }
        let embed_dim = read_u32(bytes, &mut at)? as usize;
        let hidden_dim = read_u32(bytes, &mut at)? as usize;
        let window = read_u32(bytes, &mut at)? as usize;
        let trunk = read_u32(bytes, &mut at)?;
        let levels = read_u32(bytes, &mut at)?;
        let kernel = read_u32(bytes, &mut at)? as usize;
        if trunk != TRUNK_LAYERS || levels != TCN_LEVELS || kernel != tcn::KERNEL {
            return Err(Error::Format("weights architecture mismatch".into()));
        }
        if embed_dim == 0 || hidden_dim == 0 || window == 0 {
            return Err(Error::Format("weights header has zero dimension".into()));
        }
        let count = read_u64(bytes, &mut at)? as usize;
        let layout = Layout::new(embed_dim, hidden_dim);
        if count != layout.total {
            return Err(Error::Format(format!(
                "weights hold {count} parameters, layout needs {}",
                layout.total
            )));
        }
        if bytes.len() != at + 8 * count {
            return Err(Error::Format("weights file length mismatch".into()));
        }
        let mut params = Vec::with_capacity(count);
        for i in 0..count {
            let start = at + 8 * i;
            let chunk: [u8; 8] = bytes[start..start + 8].try_into().expect("checked length");
            params.push(f64::from_le_bytes(chunk));
        }
        Ok(PolicyValueNet {
            cfg: NetConfig {
                embed_dim,
                hidden_dim,
                window,
                seed: 0,
            },
            layout,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyValueNet> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn take_bytes<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    if bytes.len() < *at + n {
        return Err(Error::Format("weights file truncated".into()));
    }
    let out = &bytes[*at..*at + n];
    *at += n;
    Ok(out)
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let b = take_bytes(bytes, at, 4)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_u64(bytes: &[u8], at: &mut usize) -> Result<u64> {
    let b = take_bytes(bytes, at, 8)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert_eq!(w.len(), out * n);
    debug_assert_eq!(b.len(), out);
    (0..out)
        .map(|r| b[r] + dot(&w[r * n..(r + 1) * n], x))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Divergence of the prior from the score target, prior-led:
/// `sum_a P(a) * ln(P(a) / T(a))` with targets clamped below at 1e-12.
pub fn loss_policy(prior: &[f64], target: &[f64]) -> Result<f64> {
    if prior.len() != target.len() {
        return Err(Error::Shape(format!(
            "distribution supports differ: {} vs {}",
            prior.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    for (&p, &t) in prior.iter().zip(target) {
        if p > 0.0 {
            loss += p * (p / t.max(1e-12)).ln();
        }
    }
    Ok(loss)
}

/// Target-led direction, selected by [`TrainConfig::reverse_kl`].
pub fn loss_policy_reversed(prior: &[f64], target: &[f64]) -> Result<f64> {
    if prior.len() != target.len() {
        return Err(Error::Shape(format!(
            "distribution supports differ: {} vs {}",
            prior.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    for (&p, &t) in prior.iter().zip(target) {
        if t > 0.0 {
            loss += t * (t / p.max(1e-12)).ln();
        }
    }
    Ok(loss)
}

/// Squared error between the value estimate and the simulated reward.
pub fn loss_value(estimate: f64, simulated: f64) -> f64 {
    (estimate - simulated).powi(2)
}
