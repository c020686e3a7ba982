//! Run configuration: one TOML file drives every pipeline stage.
//!
//! A run is identified by its design, its thresholds, and its seeds. The
//! configuration echoes into every artifact through its SHA-256 hash, so a
//! stale cache is detectable as a hash mismatch rather than a silent reuse.
//! Unknown keys are rejected; a typo in a threshold name must not silently
//! fall back to a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detectors::{DetectorConfig, Technique};
use crate::rlagent::{RewardParams, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("config invalid: {0}")]
    Invalid(String),
    #[error("config override `{key}`: {detail}")]
    Override { key: String, detail: String },
}

/// Seeds for every randomized stage; distinct streams keep stages
/// independently reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Signal-probability estimation patterns.
    pub probability: u64,
    /// Simulation patterns that pre-seed the pairwise compatibility cache.
    pub pairs: u64,
    /// Randomized characterization passes.
    pub characterize: u64,
    /// Policy-gradient training.
    pub train: u64,
    /// Corpus generation (random, trimmed-random, and evasive baselines).
    pub corpus: u64,
    /// Payload-site selection during insertion.
    pub insert: u64,
    /// Base seed for detection techniques; each technique gets an offset.
    pub detect: u64,
}

impl Default for SeedSection {
    fn default() -> SeedSection {
        SeedSection {
            probability: 7,
            pairs: 11,
            characterize: 5,
            train: 1,
            corpus: 2,
            insert: 3,
            detect: 9,
        }
    }
}

/// Reward constants for the trigger-construction MDP.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub rho1: f64,
    pub rho2: f64,
    pub gamma: f64,
}

impl Default for RewardSection {
    fn default() -> RewardSection {
        RewardSection {
            rho1: -1000.0,
            rho2: 500.0,
            gamma: 0.99,
        }
    }
}

/// Optional overrides of the training hyperparameters; unset keys keep the
/// built-in defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_timesteps: Option<u64>,
    pub rollout: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub clip: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub lr_base: Option<f64>,
    pub lr_large: Option<f64>,
    pub lr_large_window: Option<u64>,
    pub stats_window: Option<usize>,
}

/// Shared knobs for the detection techniques, plus per-technique budget
/// overrides keyed by technique name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    /// Test patterns each technique may emit.
    pub pattern_budget: usize,
    /// N-detect target for the rare-value counting techniques.
    pub k: usize,
    /// Population size for the genetic techniques.
    pub population: usize,
    /// Generation count for the genetic techniques.
    pub generations: usize,
    /// Rare-value threshold for the N-detect fitness.
    pub q: usize,
    /// Weight of the reordering term in the switching-maximization fitness.
    pub reorder_weight: f64,
    /// Per-technique pattern-budget overrides, keyed by technique name.
    pub budget_overrides: BTreeMap<String, usize>,
}

impl Default for DetectSection {
    fn default() -> DetectSection {
        DetectSection {
            pattern_budget: 10_000,
            k: 10,
            population: 100,
            generations: 200,
            q: 2,
            reorder_weight: 1.0,
            budget_overrides: BTreeMap::new(),
        }
    }
}

/// Complete run configuration; field defaults reproduce the reference
/// experiment scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Built-in design profile name, or a path to a .bench/.v netlist.
    pub design: String,
    /// Directory all artifacts are written to.
    pub output_dir: PathBuf,
    /// Rareness threshold: a net is rare when one polarity's probability is
    /// below this.
    pub theta: f64,
    /// Trigger width: rare literals per trigger.
    pub t_wid: usize,
    /// Randomized characterization passes.
    pub t_iterations: usize,
    /// Compatibility-table arity used for trimming; only pairwise tables are
    /// supported.
    pub s_pairwise: usize,
    /// Episode-start pool size: starts are the b rare nets with the lowest
    /// co-activation likelihood.
    pub b_branches: usize,
    /// Gate-count threshold above which training begins with the larger
    /// learning rate.
    pub g_threshold: usize,
    /// Verify each characterization set jointly satisfiable while it grows.
    pub exact_characterization: bool,
    /// Random patterns for signal-probability estimation.
    pub probability_patterns: usize,
    /// Random patterns simulated to pre-seed the pairwise cache.
    pub seed_patterns: usize,
    /// Triggers per generated corpus.
    pub corpus_size: usize,
    /// Conflict budget per satisfiability call.
    pub sat_budget: u64,
    /// Draw budget for the uniform random trigger baseline.
    pub random_max_draws: u64,
    /// Draw budget for the pattern-evading trigger generator.
    pub evade_max_draws: u64,
    /// Sensitivity percentage above which an implant counts as detected.
    pub sensitivity_threshold: f64,
    pub seeds: SeedSection,
    pub reward: RewardSection,
    pub train: TrainSection,
    pub detect: DetectSection,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            design: "toy".into(),
            output_dir: PathBuf::from("out"),
            theta: 0.1,
            t_wid: 4,
            t_iterations: 10_000,
            s_pairwise: 2,
            b_branches: 1,
            g_threshold: 100_000,
            exact_characterization: false,
            probability_patterns: 100_000,
            seed_patterns: 4096,
            corpus_size: 100,
            sat_budget: crate::satcore::DEFAULT_CONFLICT_BUDGET,
            random_max_draws: 200_000,
            evade_max_draws: 400_000,
            sensitivity_threshold: 10.0,
            seeds: SeedSection::default(),
            reward: RewardSection::default(),
            train: TrainSection::default(),
            detect: DetectSection::default(),
        }
    }
}

impl RunConfig {
    /// Parse and validate a TOML configuration file.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    /// Parse and validate TOML text.
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Apply `section.key=value` style overrides to TOML text, returning the
    /// patched text. Keys must address existing schema fields.
    pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, ConfigError> {
        if overrides.is_empty() {
            return Ok(text.to_string());
        }
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        for entry in overrides {
            let (key, raw) = entry
                .split_once('=')
                .ok_or_else(|| ConfigError::Override {
                    key: entry.clone(),
                    detail: "expected key=value".into(),
                })?;
            let value: toml::Value =
                toml::from_str::<toml::Table>(&format!("v = {raw}"))
                    .or_else(|_| toml::from_str::<toml::Table>(&format!("v = \"{raw}\"")))
                    .map_err(|e| ConfigError::Override {
                        key: key.to_string(),
                        detail: e.to_string(),
                    })?
                    .remove("v")
                    .expect("inserted above");
            let mut cursor = &mut doc;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                cursor = cursor
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override {
                        key: key.to_string(),
                        detail: format!("`{part}` is not a table"),
                    })?;
            }
            cursor.insert(parts[parts.len() - 1].to_string(), value);
        }
        toml::to_string(&doc).map_err(|e| ConfigError::Schema(e.to_string()))
    }

    /// Reject configurations that violate structural constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.design.trim().is_empty() {
            return fail("design must not be empty".into());
        }
        if !(self.theta > 0.0 && self.theta < 0.5) {
            return fail(format!("theta must lie in (0, 0.5), got {}", self.theta));
        }
        if self.t_wid < 2 {
            return fail(format!("t_wid must be at least 2, got {}", self.t_wid));
        }
        if self.s_pairwise != 2 {
            return fail(format!(
                "only pairwise compatibility tables are supported (s_pairwise = 2), got {}",
                self.s_pairwise
            ));
        }
        if self.b_branches == 0 {
            return fail("b_branches must be positive".into());
        }
        if self.t_iterations == 0 {
            return fail("t_iterations must be positive".into());
        }
        if self.corpus_size == 0 {
            return fail("corpus_size must be positive".into());
        }
        if self.probability_patterns == 0 {
            return fail("probability_patterns must be positive".into());
        }
        if self.sensitivity_threshold < 0.0 {
            return fail("sensitivity_threshold must be non-negative".into());
        }
        if self.reward.rho1 >= 0.0 {
            return fail(format!(
                "reward.rho1 must be negative, got {}",
                self.reward.rho1
            ));
        }
        if self.reward.rho2 <= 0.0 {
            return fail(format!(
                "reward.rho2 must be positive, got {}",
                self.reward.rho2
            ));
        }
        if !(self.reward.gamma > 0.0 && self.reward.gamma <= 1.0) {
            return fail(format!(
                "reward.gamma must lie in (0, 1], got {}",
                self.reward.gamma
            ));
        }
        if self.detect.pattern_budget == 0 {
            return fail("detect.pattern_budget must be positive".into());
        }
        if self.detect.q == 0 || self.detect.k == 0 {
            return fail("detect.k and detect.q must be positive".into());
        }
        if self.detect.population == 0 || self.detect.generations == 0 {
            return fail("detect.population and detect.generations must be positive".into());
        }
        for name in self.detect.budget_overrides.keys() {
            if Technique::from_name(name).is_none() {
                return fail(format!("unknown technique in budget_overrides: {name}"));
            }
        }
        self.reward_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical serialized form; identifies the run in every
    /// artifact sidecar.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config is serializable");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Reward constants in the shape the environment consumes.
    pub fn reward_params(&self) -> RewardParams {
        RewardParams {
            rho1: self.reward.rho1,
            rho2: self.reward.rho2,
            gamma: self.reward.gamma,
            t_wid: self.t_wid,
        }
    }

    /// Training hyperparameters: defaults overlaid with the optional
    /// overrides, branch pool and gate threshold wired through.
    pub fn train_config(&self) -> TrainConfig {
        let mut tc = TrainConfig {
            gamma: self.reward.gamma,
            g_threshold: self.g_threshold,
            b_branches: self.b_branches,
            ..TrainConfig::default()
        };
        let o = &self.train;
        if let Some(v) = o.max_timesteps {
            tc.max_timesteps = v;
        }
        if let Some(v) = o.rollout {
            tc.rollout = v;
        }
        if let Some(v) = o.epochs {
            tc.epochs = v;
        }
        if let Some(v) = o.batch {
            tc.batch = v;
        }
        if let Some(v) = o.clip {
            tc.clip = v;
        }
        if let Some(v) = o.gae_lambda {
            tc.gae_lambda = v;
        }
        if let Some(v) = o.lr_base {
            tc.lr_base = v;
        }
        if let Some(v) = o.lr_large {
            tc.lr_large = v;
        }
        if let Some(v) = o.lr_large_window {
            tc.lr_large_window = v;
        }
        if let Some(v) = o.stats_window {
            tc.stats_window = v;
        }
        tc
    }

    /// Full detector configuration for one technique; the seed is offset by
    /// the technique's stable position so techniques draw independent
    /// streams.
    pub fn detector_config(&self, technique: Technique) -> DetectorConfig {
        let offset = Technique::ALL
            .iter()
            .position(|&t| t == technique)
            .expect("technique listed") as u64;
        let budget = self
            .detect
            .budget_overrides
            .get(technique.name())
            .copied()
            .unwrap_or(self.detect.pattern_budget);
        DetectorConfig {
            technique,
            pattern_budget: budget,
            k: self.detect.k as u32,
            population: self.detect.population,
            generations: self.detect.generations,
            q: self.detect.q,
            reorder_weight: self.detect.reorder_weight,
            seed: self.seeds.detect.wrapping_add(offset),
        }
    }
}
