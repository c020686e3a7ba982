//! Trigger-selection agent: a masked actor-critic policy trained with a
//! clipped surrogate objective over the characterization-backed MDP. An
//! episode grows a set of rare nets one action at a time; the terminal
//! reward pays out only when the finished set is jointly satisfiable and no
//! characterized compatible set contains it.

use std::collections::{HashSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charact::CharacterizationData;
use crate::logicsim::{simulate, PatternSet, RareNetSet};
use crate::netlist::Netlist;
use crate::satcore::{CompatChecker, CompatQuery, CompatVerdict};
use crate::trojan::TriggerCandidate;

/// Logit value assigned to masked-out actions before the softmax.
const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("no rare nets to choose from")]
    NoRareNets,
    #[error("action {action} out of range for {n} rare nets")]
    ActionOutOfRange { action: usize, n: usize },
    #[error("state width {actual} does not match trigger width {expected}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("invalid parameters: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at timestep {timestep}: {detail}")]
    Divergence { timestep: u64, detail: String },
    #[error("not a policy checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The agent's state: the chosen rare-net set and the step count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MdpState {
    chosen: Vec<u64>,
    members: Vec<usize>,
    pub step: usize,
}

impl MdpState {
    /// Singleton state over `n` rare nets.
    pub fn singleton(n: usize, start: usize) -> MdpState {
        let mut chosen = vec![0u64; n.div_ceil(64)];
        chosen[start / 64] |= 1u64 << (start % 64);
        MdpState {
            chosen,
            members: vec![start],
            step: 0,
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.chosen[index / 64] >> (index % 64) & 1 == 1
    }

    /// Members in insertion order; the first entry is the episode start.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// The chosen set as a bitset, word-compatible with `PairTable` rows.
    pub fn chosen_words(&self) -> &[u64] {
        &self.chosen
    }

    pub fn width(&self) -> usize {
        self.members.len()
    }

    /// Binary membership vector, the policy observation.
    pub fn observation(&self, n: usize) -> Vec<f64> {
        let mut obs = vec![0.0; n];
        for &m in &self.members {
            obs[m] = 1.0;
        }
        obs
    }

    fn inserted(&self, index: usize) -> MdpState {
        let mut next = self.clone();
        next.chosen[index / 64] |= 1u64 << (index % 64);
        next.members.push(index);
        next
    }
}

/// Reward constants and the trigger width they are paid against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardParams {
    pub rho1: f64,
    pub rho2: f64,
    pub gamma: f64,
    pub t_wid: usize,
}

impl Default for RewardParams {
    fn default() -> RewardParams {
        RewardParams {
            rho1: -1000.0,
            rho2: 500.0,
            gamma: 0.99,
            t_wid: 4,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.rho1 < 0.0 && 0.0 < self.rho2) {
            return Err(RlError::InvalidConfig(format!(
                "need rho1 < 0 < rho2, got {} and {}",
                self.rho1, self.rho2
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RlError::InvalidConfig(format!(
                "discount {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.t_wid < 2 {
            return Err(RlError::InvalidConfig(format!(
                "trigger width {} below 2",
                self.t_wid
            )));
        }
        Ok(())
    }
}

/// Trainer hyperparameters. The learning rate is piecewise: `lr_base`
/// throughout, except the first `lr_large_window` timesteps of designs with
/// at least `g_threshold` gates, which use `lr_large`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_timesteps: u64,
    pub rollout: usize,
    pub epochs: usize,
    pub batch: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr_base: f64,
    pub lr_large: f64,
    pub lr_large_window: u64,
    pub g_threshold: usize,
    pub b_branches: usize,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub stats_window: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            max_timesteps: 100_000,
            rollout: 50,
            epochs: 10,
            batch: 64,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr_base: 3e-4,
            lr_large: 3e-3,
            lr_large_window: 10_000,
            g_threshold: 100_000,
            b_branches: 1,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            stats_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let positive = [
            ("max_timesteps", self.max_timesteps as f64),
            ("rollout", self.rollout as f64),
            ("epochs", self.epochs as f64),
            ("batch", self.batch as f64),
            ("clip", self.clip),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("lr_base", self.lr_base),
            ("lr_large", self.lr_large),
            ("g_threshold", self.g_threshold as f64),
            ("b_branches", self.b_branches as f64),
            ("max_grad_norm", self.max_grad_norm),
            ("stats_window", self.stats_window as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(RlError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Learning rate in effect at a global timestep.
pub fn learning_rate(config: &TrainConfig, num_gates: usize, timestep: u64) -> f64 {
    if num_gates >= config.g_threshold && timestep < config.lr_large_window {
        config.lr_large
    } else {
        config.lr_base
    }
}

/// The trigger-growing environment. Holds per-run counters for the two
/// degraded step outcomes: full-set SAT rejections that passed the pairwise
/// prefilter, and full-set checks that exhausted the solver budget.
pub struct TriggerEnv<'a> {
    checker: &'a CompatChecker,
    rares: &'a RareNetSet,
    data: &'a CharacterizationData,
    reward: RewardParams,
    start_pool: Vec<usize>,
    pub sat_fail_after_pairwise: u64,
    pub unknown_full_set: u64,
}

impl<'a> TriggerEnv<'a> {
    /// Start pool: uniform over all rare nets, or over the `B` least-likely
    /// branches when the design has at least `g_threshold` gates.
    pub fn new(
        checker: &'a CompatChecker,
        rares: &'a RareNetSet,
        data: &'a CharacterizationData,
        reward: RewardParams,
        config: &TrainConfig,
    ) -> Result<TriggerEnv<'a>, RlError> {
        reward.validate()?;
        let n = rares.len();
        if n == 0 {
            return Err(RlError::NoRareNets);
        }
        let start_pool = if checker.netlist().num_gates() >= config.g_threshold {
            data.select_branches(config.b_branches)
        } else {
            (0..n).collect()
        };
        Ok(TriggerEnv {
            checker,
            rares,
            data,
            reward,
            start_pool,
            sat_fail_after_pairwise: 0,
            unknown_full_set: 0,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.rares.len()
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    /// New episode: a singleton drawn uniformly from the start pool.
    pub fn reset(&self, rng: &mut impl Rng) -> MdpState {
        let start = self.start_pool[rng.random_range(0..self.start_pool.len())];
        MdpState::singleton(self.rares.len(), start)
    }

    /// Action allowed iff the net is not already chosen and is pairwise
    /// compatible with every chosen net.
    pub fn action_mask(&self, state: &MdpState) -> Vec<bool> {
        let table = self.data.pair_table();
        let n = self.rares.len();
        let mut mask = vec![false; n];
        for (c, slot) in mask.iter_mut().enumerate() {
            *slot = !state.contains(c) && table.covers(c, state.chosen_words());
        }
        mask
    }

    /// One transition. The set grows only when the extended set passes the
    /// pairwise prefilter and the memoized full-set SAT check; a full-set
    /// verdict of Unknown counts as not compatible.
    pub fn step(
        &mut self,
        state: &MdpState,
        action: usize,
    ) -> Result<(MdpState, f64, bool), RlError> {
        let n = self.rares.len();
        if action >= n {
            return Err(RlError::ActionOutOfRange { action, n });
        }
        let table = self.data.pair_table();
        let mut next;
        let reward;
        if state.contains(action) {
            // Unreachable through the mask; a repeated net leaves the set
            // unchanged and pays nothing.
            next = state.clone();
            reward = 0.0;
        } else if !state.members().iter().all(|&m| table.entry(m, action)) {
            next = state.clone();
            reward = self.reward.rho1;
        } else {
            let mut indices = state.members().to_vec();
            indices.push(action);
            indices.sort_unstable();
            let query =
                CompatQuery::new(self.rares.literals(&indices)).expect("distinct rare nets");
            match self.checker.check(&query) {
                CompatVerdict::Compatible => {
                    next = state.inserted(action);
                    if next.width() == self.reward.t_wid {
                        reward = if self.data.covered(&indices) {
                            0.0
                        } else {
                            self.reward.rho2
                        };
                    } else {
                        reward = 0.0;
                    }
                }
                verdict => {
                    if verdict == CompatVerdict::Unknown {
                        self.unknown_full_set += 1;
                    } else {
                        self.sat_fail_after_pairwise += 1;
                    }
                    next = state.clone();
                    reward = self.reward.rho1;
                }
            }
        }
        next.step = state.step + 1;
        let done = next.width() == self.reward.t_wid || next.step >= self.reward.t_wid - 1;
        Ok((next, reward, done))
    }
}

// ---------------------------------------------------------------------------
// Networks

/// Fully connected layers with tanh between them and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Orthonormalize the columns of `a` (requires ncols <= nrows) with
/// modified Gram-Schmidt.
fn gs_columns(a: &mut Array2<f64>) {
    let cols = a.ncols();
    for j in 0..cols {
        for k in 0..j {
            let dot = a.column(j).dot(&a.column(k));
            let prev = a.column(k).to_owned();
            a.column_mut(j).zip_mut_with(&prev, |x, &p| *x -= dot * p);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|x| x / norm.max(1e-12));
    }
}

/// Orthogonal `rows x cols` matrix scaled by `gain`, orthonormal along the
/// shorter dimension.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
    };
    if cols <= rows {
        let mut a = normal(rng, rows, cols);
        gs_columns(&mut a);
        a * gain
    } else {
        let mut a = normal(rng, cols, rows);
        gs_columns(&mut a);
        a.t().to_owned() * gain
    }
}

impl Mlp {
    /// `dims` = layer widths input-first; one gain per weight matrix.
    pub fn new(dims: &[usize], gains: &[f64], rng: &mut ChaCha8Rng) -> Mlp {
        assert_eq!(dims.len() - 1, gains.len());
        let layers = dims
            .windows(2)
            .zip(gains)
            .map(|(w, &gain)| {
                (
                    orthogonal(w[0], w[1], gain, rng),
                    Array1::zeros(w[1]),
                )
            })
            .collect();
        Mlp { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].0.nrows()];
        dims.extend(self.layers.iter().map(|(w, _)| w.ncols()));
        dims
    }

    /// Batched forward pass; returns hidden activations for backprop plus
    /// the linear output.
    pub fn forward(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = cur.dot(w);
            z += b;
            if i + 1 < self.layers.len() {
                let a = z.mapv(f64::tanh);
                acts.push(a.clone());
                cur = a;
            } else {
                return (acts, z);
            }
        }
        unreachable!("mlp has at least one layer");
    }

    /// Gradients of all weights and biases given dL/d(output).
    pub fn backward(
        &self,
        x: &Array2<f64>,
        acts: &[Array2<f64>],
        dout: &Array2<f64>,
    ) -> Vec<(Array2<f64>, Array1<f64>)> {
        let depth = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(depth);
        let mut dz = dout.clone();
        for i in (0..depth).rev() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            let dw = input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            grads.push((dw, db));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].0.t());
                // through tanh: a' = 1 - a^2
                da.zip_mut_with(&acts[i - 1], |d, &a| *d *= 1.0 - a * a);
                dz = da;
            }
        }
        grads.reverse();
        grads
    }
}

/// Adaptive-moment optimizer over one flattened list of layer tensors.
struct Adam {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(shapes: &[&Mlp]) -> Adam {
        let zeros = |nets: &[&Mlp]| {
            nets.iter()
                .flat_map(|mlp| {
                    mlp.layers
                        .iter()
                        .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                })
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(shapes),
            v: zeros(shapes),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }

    fn step(&mut self, params: Vec<(&mut Array2<f64>, &mut Array1<f64>)>, grads: &[(Array2<f64>, Array1<f64>)], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, ((w, b), (gw, gb))) in params.into_iter().zip(grads).enumerate() {
            let (mw, mb) = &mut self.m[slot];
            let (vw, vb) = &mut self.v[slot];
            mw.zip_mut_with(gw, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            vw.zip_mut_with(gw, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            mb.zip_mut_with(gb, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            vb.zip_mut_with(gb, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, m), v) in w.iter_mut().zip(mw.iter()).zip(vw.iter()) {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
            for ((p, m), v) in b.iter_mut().zip(mb.iter()).zip(vb.iter()) {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients in place so their global L2 norm is at most `max`.
fn clip_grad_norm(grads: &mut [(Array2<f64>, Array1<f64>)], max: f64) {
    let mut sq = 0.0;
    for (gw, gb) in grads.iter() {
        sq += gw.iter().map(|g| g * g).sum::<f64>();
        sq += gb.iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max {
        let scale = max / norm;
        for (gw, gb) in grads.iter_mut() {
            gw.mapv_inplace(|g| g * scale);
            gb.mapv_inplace(|g| g * scale);
        }
    }
}

/// Policy and value networks plus the training configuration echo.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub policy: Mlp,
    pub value: Mlp,
    pub config_echo: String,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"HTRL";
const CHECKPOINT_VERSION: u32 = 1;

impl PolicyParams {
    /// Masked logits for one observation.
    pub fn masked_logits(&self, obs: &[f64], mask: &[bool]) -> Array1<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
        let (_, out) = self.policy.forward(&x);
        let mut logits = out.row(0).to_owned();
        for (l, &ok) in logits.iter_mut().zip(mask) {
            if !ok {
                *l = MASKED_LOGIT;
            }
        }
        logits
    }

    /// Probabilities over actions; masked actions get probability zero
    /// (up to floating-point underflow) and the rest sum to one.
    pub fn action_probabilities(&self, obs: &[f64], mask: &[bool]) -> Vec<f64> {
        let logits = self.masked_logits(obs, mask);
        softmax(logits.as_slice().expect("contiguous"))
    }

    pub fn state_value(&self, obs: &[f64]) -> f64 {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
        let (_, out) = self.value.forward(&x);
        out[[0, 0]]
    }

    /// Versioned little-endian binary checkpoint with the config echo.
    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Checkpoint bytes in the same format `save` writes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.obs_dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_actions as u64).to_le_bytes());
        let echo = self.config_echo.as_bytes();
        buf.extend_from_slice(&(echo.len() as u64).to_le_bytes());
        buf.extend_from_slice(echo);
        for net in [&self.policy, &self.value] {
            buf.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
            for (w, b) in &net.layers {
                buf.extend_from_slice(&(w.nrows() as u64).to_le_bytes());
                buf.extend_from_slice(&(w.ncols() as u64).to_le_bytes());
                for v in w.iter() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                for v in b.iter() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        buf
    }

    pub fn load(path: &Path) -> Result<PolicyParams, RlError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        PolicyParams::from_bytes(&bytes)
    }

    /// Parse checkpoint bytes produced by `to_bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyParams, RlError> {
        let mut at = 0usize;
        let take = |at: &mut usize, len: usize| -> Result<&[u8], RlError> {
            let s = bytes
                .get(*at..*at + len)
                .ok_or_else(|| RlError::BadCheckpoint("truncated".into()))?;
            *at += len;
            Ok(s)
        };
        let u64_at = |at: &mut usize| -> Result<u64, RlError> {
            Ok(u64::from_le_bytes(take(at, 8)?.try_into().unwrap()))
        };
        if take(&mut at, 4)? != CHECKPOINT_MAGIC {
            return Err(RlError::BadCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(RlError::BadCheckpoint(format!("unknown version {version}")));
        }
        let obs_dim = u64_at(&mut at)? as usize;
        let n_actions = u64_at(&mut at)? as usize;
        let echo_len = u64_at(&mut at)? as usize;
        let config_echo = String::from_utf8(take(&mut at, echo_len)?.to_vec())
            .map_err(|_| RlError::BadCheckpoint("config echo is not utf-8".into()))?;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let layer_count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
            let mut layers = Vec::with_capacity(layer_count as usize);
            for _ in 0..layer_count {
                let rows = u64_at(&mut at)? as usize;
                let cols = u64_at(&mut at)? as usize;
                let mut w = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    w.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
                }
                let w = Array2::from_shape_vec((rows, cols), w)
                    .map_err(|e| RlError::BadCheckpoint(e.to_string()))?;
                let mut b = Vec::with_capacity(cols);
                for _ in 0..cols {
                    b.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
                }
                layers.push((w, Array1::from_vec(b)));
            }
            nets.push(Mlp { layers });
        }
        let value = nets.pop().expect("two nets");
        let policy = nets.pop().expect("two nets");
        Ok(PolicyParams {
            obs_dim,
            n_actions,
            policy,
            value,
            config_echo,
        })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

// ---------------------------------------------------------------------------
// Training

/// One episode summary; sigma and mean are over the trailing stats window.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LogRecord {
    pub episode: u64,
    pub timestep: u64,
    pub reward: f64,
    pub mean: f64,
    pub sigma: f64,
    pub terminal: Vec<String>,
    pub evading: bool,
}

/// Episode records plus run counters; serialized as line-delimited JSON
/// with one leading meta line.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
    pub sat_fail_after_pairwise: u64,
    pub unknown_full_set: u64,
    pub timesteps: u64,
    pub config_echo: String,
}

#[derive(Serialize, Deserialize)]
struct LogMeta {
    sat_fail_after_pairwise: u64,
    unknown_full_set: u64,
    timesteps: u64,
    config_echo: String,
}

impl TrainingLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<(), RlError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// JSONL text: one meta line, then one record per episode.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = LogMeta {
            sat_fail_after_pairwise: self.sat_fail_after_pairwise,
            unknown_full_set: self.unknown_full_set,
            timesteps: self.timesteps,
            config_echo: self.config_echo.clone(),
        };
        out.push_str(&serde_json::to_string(&meta).expect("serializable"));
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn read_jsonl(path: &Path) -> Result<TrainingLog, RlError> {
        let text = std::fs::read_to_string(path)?;
        TrainingLog::from_jsonl(&text)
    }

    /// Parse JSONL text produced by `to_jsonl`.
    pub fn from_jsonl(text: &str) -> Result<TrainingLog, RlError> {
        let mut lines = text.lines();
        let meta: LogMeta = match lines.next() {
            Some(first) => serde_json::from_str(first)
                .map_err(|e| RlError::BadCheckpoint(format!("log meta line: {e}")))?,
            None => return Err(RlError::BadCheckpoint("empty log".into())),
        };
        let mut records = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| RlError::BadCheckpoint(format!("log record: {e}")))?,
            );
        }
        Ok(TrainingLog {
            records,
            sat_fail_after_pairwise: meta.sat_fail_after_pairwise,
            unknown_full_set: meta.unknown_full_set,
            timesteps: meta.timesteps,
            config_echo: meta.config_echo,
        })
    }
}

fn window_stats(window: &VecDeque<f64>) -> (f64, f64) {
    if window.is_empty() {
        return (0.0, 0.0);
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample an action from the masked softmax; returns (action, log prob).
/// A fully masked row degrades to a uniform draw, whose illegal pick then
/// pays the incompatibility penalty in the environment.
fn sample_masked(
    logits: &Array1<f64>,
    mask: &[bool],
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    let masked: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &ok)| if ok { l } else { MASKED_LOGIT })
        .collect();
    let max = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = masked.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let draw: f64 = rng.random_range(0.0..1.0) * sum;
    let mut acc = 0.0;
    let mut action = masked.len() - 1;
    for (i, &e) in exps.iter().enumerate() {
        acc += e;
        if draw < acc {
            action = i;
            break;
        }
    }
    let logp = masked[action] - max - sum.ln();
    (action, logp)
}

struct Rollout {
    obs: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    actions: Vec<usize>,
    logps: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    values: Vec<f64>,
}

/// Train the masked actor-critic on the characterization-backed MDP.
/// Serial and deterministic for a fixed seed.
pub fn train(
    checker: &CompatChecker,
    rares: &RareNetSet,
    data: &CharacterizationData,
    config: &TrainConfig,
    reward_params: &RewardParams,
    seed: u64,
) -> Result<(PolicyParams, TrainingLog), RlError> {
    config.validate()?;
    reward_params.validate()?;
    let n = rares.len();
    if n == 0 {
        return Err(RlError::NoRareNets);
    }
    let num_gates = checker.netlist().num_gates();
    let netlist = checker.netlist().clone();
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
    let mut env_rng = ChaCha8Rng::seed_from_u64(mix(seed, 2));
    let mut act_rng = ChaCha8Rng::seed_from_u64(mix(seed, 3));
    let mut perm_rng = ChaCha8Rng::seed_from_u64(mix(seed, 4));

    let mut policy = Mlp::new(
        &[n, 64, 64, n],
        &[2f64.sqrt(), 2f64.sqrt(), 0.01],
        &mut init_rng,
    );
    let mut value = Mlp::new(
        &[n, 64, 64, 1],
        &[2f64.sqrt(), 2f64.sqrt(), 1.0],
        &mut init_rng,
    );
    let mut adam = Adam::new(&[&policy, &value]);
    let mut env = TriggerEnv::new(checker, rares, data, reward_params.clone(), config)?;
    let echo = serde_json::json!({
        "config": config,
        "reward": reward_params,
        "seed": seed,
        "gae_note": "generalized advantage, lambda in config",
    })
    .to_string();
    let mut log = TrainingLog {
        config_echo: echo.clone(),
        ..TrainingLog::default()
    };
    let mut window: VecDeque<f64> = VecDeque::new();

    let mut state = env.reset(&mut env_rng);
    let mut ep_return = 0.0f64;
    let mut episode = 0u64;
    let mut timestep = 0u64;
    let minibatch = config.batch.min(config.rollout);

    while timestep < config.max_timesteps {
        let lr = learning_rate(config, num_gates, timestep);
        let mut buf = Rollout {
            obs: Vec::with_capacity(config.rollout),
            masks: Vec::with_capacity(config.rollout),
            actions: Vec::with_capacity(config.rollout),
            logps: Vec::with_capacity(config.rollout),
            rewards: Vec::with_capacity(config.rollout),
            dones: Vec::with_capacity(config.rollout),
            values: Vec::with_capacity(config.rollout),
        };
        for _ in 0..config.rollout {
            let obs = state.observation(n);
            let mask = env.action_mask(&state);
            let x = Array2::from_shape_vec((1, n), obs.clone()).expect("row");
            let (_, pol_out) = policy.forward(&x);
            let (_, val_out) = value.forward(&x);
            let logits = pol_out.row(0).to_owned();
            let (action, logp) = sample_masked(&logits, &mask, &mut act_rng);
            let (next, r, done) = env.step(&state, action)?;
            buf.obs.push(obs);
            buf.masks.push(mask);
            buf.actions.push(action);
            buf.logps.push(logp);
            buf.rewards.push(r);
            buf.dones.push(done);
            buf.values.push(val_out[[0, 0]]);
            ep_return += r;
            timestep += 1;
            if done {
                episode += 1;
                window.push_back(ep_return);
                if window.len() > config.stats_window {
                    window.pop_front();
                }
                let (mean, sigma) = window_stats(&window);
                log.records.push(LogRecord {
                    episode,
                    timestep,
                    reward: ep_return,
                    mean,
                    sigma,
                    terminal: next
                        .members()
                        .iter()
                        .map(|&i| netlist.net_name(rares.get(i).net).to_string())
                        .collect(),
                    evading: r == reward_params.rho2,
                });
                ep_return = 0.0;
                state = env.reset(&mut env_rng);
            } else {
                state = next;
            }
        }

        // Generalized advantage over the rollout; bootstrap unless the
        // final step closed its episode.
        let len = buf.rewards.len();
        let last_value = if *buf.dones.last().expect("nonempty rollout") {
            0.0
        } else {
            let x = Array2::from_shape_vec((1, n), state.observation(n)).expect("row");
            let (_, v) = value.forward(&x);
            v[[0, 0]]
        };
        let mut advantages = vec![0.0f64; len];
        let mut lastgae = 0.0f64;
        for t in (0..len).rev() {
            let nonterminal = if buf.dones[t] { 0.0 } else { 1.0 };
            let next_v = if t + 1 == len {
                last_value
            } else {
                buf.values[t + 1]
            };
            let delta = buf.rewards[t] + config.gamma * next_v * nonterminal - buf.values[t];
            lastgae = delta + config.gamma * config.gae_lambda * nonterminal * lastgae;
            advantages[t] = lastgae;
        }
        let returns: Vec<f64> = advantages
            .iter()
            .zip(&buf.values)
            .map(|(a, v)| a + v)
            .collect();

        for _epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut perm_rng);
            for chunk in order.chunks(minibatch) {
                let b = chunk.len();
                let mut x = Array2::zeros((b, n));
                for (row, &i) in chunk.iter().enumerate() {
                    for (col, &v) in buf.obs[i].iter().enumerate() {
                        x[[row, col]] = v;
                    }
                }
                let (pol_acts, mut logits) = policy.forward(&x);
                let (val_acts, val_out) = value.forward(&x);
                for (row, &i) in chunk.iter().enumerate() {
                    for (col, &ok) in buf.masks[i].iter().enumerate() {
                        if !ok {
                            logits[[row, col]] = MASKED_LOGIT;
                        }
                    }
                }
                // Per-minibatch advantage normalization.
                let mean_a = chunk.iter().map(|&i| advantages[i]).sum::<f64>() / b as f64;
                let var_a = chunk
                    .iter()
                    .map(|&i| (advantages[i] - mean_a).powi(2))
                    .sum::<f64>()
                    / b as f64;
                let std_a = var_a.sqrt() + 1e-8;

                let mut dlogits = Array2::zeros((b, n));
                let mut dvalue = Array2::zeros((b, 1));
                let mut policy_loss = 0.0;
                let mut value_loss = 0.0;
                for (row, &i) in chunk.iter().enumerate() {
                    let row_logits = logits.row(row);
                    let max = row_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row_logits.iter().map(|&l| (l - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let a = buf.actions[i];
                    let new_logp = row_logits[a] - max - sum.ln();
                    let ratio = (new_logp - buf.logps[i]).exp();
                    let adv = (advantages[i] - mean_a) / std_a;
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * adv;
                    policy_loss += -unclipped.min(clipped);
                    // Gradient flows only when the unclipped branch is the
                    // active minimum.
                    let coeff = if unclipped <= clipped {
                        -adv * ratio / b as f64
                    } else {
                        0.0
                    };
                    if coeff != 0.0 {
                        for (col, &e) in exps.iter().enumerate() {
                            let p = e / sum;
                            let indicator = if col == a { 1.0 } else { 0.0 };
                            dlogits[[row, col]] = coeff * (indicator - p);
                        }
                    }
                    let v = val_out[[row, 0]];
                    let err = v - returns[i];
                    value_loss += err * err;
                    dvalue[[row, 0]] = config.vf_coef * 2.0 * err / b as f64;
                }
                policy_loss /= b as f64;
                value_loss /= b as f64;
                let loss = policy_loss + config.vf_coef * value_loss;
                if !loss.is_finite() {
                    return Err(RlError::Divergence {
                        timestep,
                        detail: format!(
                            "policy loss {policy_loss}, value loss {value_loss}"
                        ),
                    });
                }
                let mut grads = policy.backward(&x, &pol_acts, &dlogits);
                grads.extend(value.backward(&x, &val_acts, &dvalue));
                clip_grad_norm(&mut grads, config.max_grad_norm);
                let params: Vec<(&mut Array2<f64>, &mut Array1<f64>)> = policy
                    .layers
                    .iter_mut()
                    .chain(value.layers.iter_mut())
                    .map(|(w, b)| (w, b))
                    .collect();
                adam.step(params, &grads, lr);
            }
        }
    }

    log.timesteps = timestep;
    log.sat_fail_after_pairwise = env.sat_fail_after_pairwise;
    log.unknown_full_set = env.unknown_full_set;
    let params = PolicyParams {
        obs_dim: n,
        n_actions: n,
        policy,
        value,
        config_echo: echo,
    };
    Ok((params, log))
}

/// Extraction result; `shortfall` is set when fewer distinct evading
/// terminals existed than were requested.
#[derive(Clone, Debug)]
pub struct Extraction {
    pub candidates: Vec<TriggerCandidate>,
    pub requested: usize,
}

impl Extraction {
    pub fn shortfall(&self) -> bool {
        self.candidates.len() < self.requested
    }
}

/// Distinct evading terminal sets, most recent first, re-verified jointly
/// satisfiable; at most `count`.
pub fn extract_triggers(
    log: &TrainingLog,
    netlist: &Netlist,
    checker: &CompatChecker,
    rares: &RareNetSet,
    count: usize,
) -> Extraction {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut candidates = Vec::new();
    for record in log.records.iter().rev() {
        if !record.evading || candidates.len() >= count {
            continue;
        }
        let indices: Option<Vec<usize>> = record
            .terminal
            .iter()
            .map(|name| netlist.net_id(name).and_then(|net| rares.position(net)))
            .collect();
        let Some(mut indices) = indices else {
            continue;
        };
        indices.sort_unstable();
        if !seen.insert(indices.clone()) {
            continue;
        }
        let query = match CompatQuery::new(rares.literals(&indices)) {
            Ok(q) => q,
            Err(_) => continue,
        };
        if checker.check(&query) != CompatVerdict::Compatible {
            continue;
        }
        candidates.push(TriggerCandidate::from_rare_indices(rares, &indices));
    }
    Extraction {
        candidates,
        requested: count,
    }
}

/// Pattern-set reward: pays rho2 iff no pattern drives every literal of the
/// completed set to its rare value simultaneously. Kept for the
/// online-versus-offline throughput comparison only.
pub fn online_reward(
    netlist: &Netlist,
    rares: &RareNetSet,
    state: &MdpState,
    patterns: &PatternSet,
    params: &RewardParams,
) -> Result<f64, RlError> {
    if state.width() != params.t_wid {
        return Err(RlError::WidthMismatch {
            expected: params.t_wid,
            actual: state.width(),
        });
    }
    if patterns.is_empty() {
        return Ok(params.rho2);
    }
    let sim = simulate(netlist, patterns).expect("patterns match netlist inputs");
    let mut acc: Option<Vec<u64>> = None;
    for &i in state.members() {
        let r = rares.get(i);
        let row = sim.at_value_row(r.net, r.rare_value);
        acc = Some(match acc {
            None => row,
            Some(mut a) => {
                for (w, r) in a.iter_mut().zip(&row) {
                    *w &= r;
                }
                a
            }
        });
    }
    let activated = acc.expect("state has members").iter().any(|&w| w != 0);
    Ok(if activated { 0.0 } else { params.rho2 })
}
