//! Command-line driver: the experimental flow as idempotent subcommands
//! sharing one configuration file.
//!
//! Stages communicate only through files in the output directory. Each stage
//! validates its inputs' content hashes and configuration provenance before
//! consuming them, reuses its own output when the recorded provenance matches
//! the current request, and reports failures as one-line JSON on stderr with
//! a distinct exit code per error class.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactError};
use crate::charact::{
    build_pair_table, characterize, seed_pairs_from_simulation, CharacterizationData,
    CharacterizationFile, CharacterizationKey,
};
use crate::config::{ConfigError, RunConfig};
use crate::designgen::Profile;
use crate::detectors::{run_detector, DetectorManifest, Technique};
use crate::evalharness::{
    activation_flags, classify_sensitivity, side_channel_sensitivity, DetectorEval, EvalError,
    EvalReport, SensitivityOutcome,
};
use crate::logicsim::{
    identify_rare_nets, parse_rare_net_file, rare_nets_to_text, signal_probabilities, simulate,
    PatternFile, PatternSet, RareNetSet,
};
use crate::netlist::{
    emit_flop_list, parse_bench, parse_bench_full_scan, parse_verilog_full_scan, Netlist,
};
use crate::rlagent::{extract_triggers, train, TrainingLog};
use crate::satcore::{encode_netlist, CompatChecker, Lit};
use crate::trojan::{
    evading_triggers, insert_trojan, minus_rl_triggers, random_trigger, Provenance, StopRule,
    TriggerCandidate,
};

/// Environment variable overriding the worker-thread count.
pub const WORKERS_ENV: &str = "HTLAB_WORKERS";

const DESIGN_FILE: &str = "design.bench";
const FLOPS_FILE: &str = "design.flops";
const RARE_FILE: &str = "rare_nets.txt";
const CHARACT_FILE: &str = "charact.json";
const POLICY_FILE: &str = "policy.bin";
const TRAIN_LOG_FILE: &str = "train.jsonl";
const REPORT_FILE: &str = "report.txt";
const CNF_FILE: &str = "design.cnf";

#[derive(Parser)]
#[command(
    name = "htlab",
    version,
    about = "Gate-level hardware Trojan insertion and detection workbench"
)]
pub struct Cli {
    /// Path to the run configuration TOML.
    #[arg(long, global = true, default_value = "run.toml")]
    pub config: PathBuf,
    /// Override a configuration key, e.g. --set theta=0.05 or
    /// --set seeds.train=9. Repeatable; any key in the file is addressable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Materialize the configured design into the output directory,
    /// applying the full-scan transform to sequential sources.
    GenDesign,
    /// Estimate signal probabilities and list nets below the rareness
    /// threshold.
    RareNets,
    /// Run the randomized compatible-set characterization and cache it.
    Characterize,
    /// Train the trigger-construction policy against the cached
    /// characterization.
    Train,
    /// Generate a trigger corpus of the given provenance.
    GenHt {
        #[arg(value_enum)]
        kind: CorpusKind,
        /// Technique whose emitted patterns the evasive corpus must avoid.
        #[arg(long, default_value = "tarmac")]
        against: String,
    },
    /// Insert every corpus trigger into the golden design as a gated
    /// payload flip.
    Insert {
        /// Restrict to one corpus; default processes every corpus present.
        #[arg(long, value_enum)]
        corpus: Option<CorpusKind>,
    },
    /// Run one detection technique and emit its test patterns.
    Detect { technique: String },
    /// Score every inserted corpus against every emitted pattern set.
    Evaluate {
        /// Restrict to one corpus; default processes every corpus present.
        #[arg(long, value_enum)]
        corpus: Option<CorpusKind>,
    },
    /// Render the evaluation reports as text tables.
    Report,
    /// Export the design as DIMACS CNF for external solvers.
    ExportCnf {
        /// Output path; defaults to design.cnf in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated net assumptions, e.g. "n12=1,n40=0".
        #[arg(long)]
        assume: Option<String>,
    },
}

/// Trigger-corpus provenance, as spelled on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    Rl,
    Random,
    MinusRl,
    Evade,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 4] = [
        CorpusKind::Rl,
        CorpusKind::Random,
        CorpusKind::MinusRl,
        CorpusKind::Evade,
    ];

    /// File-name stem shared by the corpus, insertion, and evaluation
    /// artifacts.
    pub fn stem(self) -> &'static str {
        match self {
            CorpusKind::Rl => "rl",
            CorpusKind::Random => "random",
            CorpusKind::MinusRl => "minus_rl",
            CorpusKind::Evade => "evade",
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            CorpusKind::Rl => Provenance::Rl,
            CorpusKind::Random => Provenance::Random,
            CorpusKind::MinusRl => Provenance::MinusRl,
            CorpusKind::Evade => Provenance::Evade,
        }
    }

    fn producer(self) -> String {
        format!("gen-ht {}", self.stem().replace('_', "-"))
    }
}

fn corpus_file(kind: CorpusKind) -> String {
    format!("corpus_{}.json", kind.stem())
}

fn ht_manifest_file(kind: CorpusKind) -> String {
    format!("ht/{}/manifest.json", kind.stem())
}

fn eval_file(kind: CorpusKind) -> String {
    format!("eval_{}.json", kind.stem())
}

fn patterns_file(technique: Technique) -> String {
    format!("patterns_{}.txt", technique.name())
}

fn detect_manifest_file(technique: Technique) -> String {
    format!("manifest_{}.json", technique.name())
}

/// One trigger in a corpus file: named rare literals plus the estimated
/// joint rare probability.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub nets: Vec<(String, u8)>,
    pub prob_product: f64,
}

/// On-disk trigger corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusFile {
    pub provenance: Provenance,
    pub design_sha256: String,
    pub entries: Vec<CorpusEntry>,
}

/// One inserted Trojan: file names plus content hashes so evaluation can
/// verify the materialized netlists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InsertEntry {
    pub bench: String,
    pub descriptor: String,
    pub trigger_net: String,
    pub payload_net: String,
    pub added_gates: usize,
    pub bench_sha256: String,
    pub descriptor_sha256: String,
}

/// Batch record for one corpus insertion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InsertManifest {
    pub provenance: Provenance,
    pub design_sha256: String,
    pub entries: Vec<InsertEntry>,
}

/// Driver errors, each mapped to a machine-readable kind and exit code.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Artifact(ArtifactError),
    /// Input produced under a different configuration than the current one.
    StaleInput { path: PathBuf, producer: String },
    Internal(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Artifact(ArtifactError::Missing { .. }) => "missing_prerequisite",
            CliError::Artifact(ArtifactError::Io { .. }) => "internal",
            CliError::Artifact(_) => "hash_mismatch",
            CliError::StaleInput { .. } => "hash_mismatch",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" => 2,
            "missing_prerequisite" => 3,
            "hash_mismatch" => 4,
            _ => 1,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let detail = self.detail();
        serde_json::json!({ "error": self.kind(), "detail": detail }).to_string()
    }

    fn detail(&self) -> String {
        match self {
            CliError::Config(e) => e.to_string(),
            CliError::Artifact(e) => e.to_string(),
            CliError::StaleInput { path, producer } => format!(
                "`{}` was produced under a different configuration; re-run `{producer}` first",
                path.display()
            ),
            CliError::Internal(msg) => msg.clone(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Config(e)
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> CliError {
        CliError::Artifact(e)
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// splitmix64 finalizer; derives per-item seeds from a stage seed.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parse and apply the worker-count override before any parallel work runs.
fn apply_worker_override() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| {
        CliError::Config(ConfigError::Invalid(format!(
            "{WORKERS_ENV} must be a positive integer, got `{raw}`"
        )))
    })?;
    if n == 0 {
        return Err(CliError::Config(ConfigError::Invalid(format!(
            "{WORKERS_ENV} must be positive"
        ))));
    }
    // Errors only if a global pool already exists, which keeps that pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Process entry point: parse, dispatch, and map errors to exit codes.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

/// Dispatch a parsed invocation; separated from `main_entry` for tests.
pub fn run(cli: Cli) -> Result<(), CliError> {
    apply_worker_override()?;
    let text = std::fs::read_to_string(&cli.config).map_err(ConfigError::Io)?;
    let patched = RunConfig::apply_overrides(&text, &cli.overrides)?;
    let config = RunConfig::from_toml(&patched)?;
    let ctx = Ctx::new(config);
    match cli.command {
        Command::GenDesign => ctx.gen_design(),
        Command::RareNets => ctx.rare_nets(),
        Command::Characterize => ctx.characterize(),
        Command::Train => ctx.train(),
        Command::GenHt { kind, against } => ctx.gen_ht(kind, &against),
        Command::Insert { corpus } => ctx.insert(corpus),
        Command::Detect { technique } => ctx.detect(&technique),
        Command::Evaluate { corpus } => ctx.evaluate(corpus),
        Command::Report => ctx.report(),
        Command::ExportCnf { out, assume } => ctx.export_cnf(out, assume.as_deref()),
    }
}

/// Shared stage context: the validated configuration and its hash.
pub struct Ctx {
    config: RunConfig,
    config_sha256: String,
}

impl Ctx {
    pub fn new(config: RunConfig) -> Ctx {
        let config_sha256 = config.sha256();
        Ctx {
            config,
            config_sha256,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    /// Load a prerequisite artifact: content must match its sidecar and the
    /// sidecar must carry the current configuration hash.
    fn input(&self, name: &str, producer: &str) -> Result<(Vec<u8>, String), CliError> {
        let path = self.path(name);
        let (bytes, meta) = artifact::load_verified(&path, producer)?;
        if meta.config_sha256 != self.config_sha256 {
            return Err(CliError::StaleInput {
                path,
                producer: producer.to_string(),
            });
        }
        Ok((bytes, meta.content_sha256))
    }

    fn fresh(&self, name: &str, seed: u64, inputs: &BTreeMap<String, String>) -> bool {
        artifact::cache_fresh(&self.path(name), &self.config_sha256, seed, inputs)
    }

    /// Write a stage output with its provenance sidecar; returns the content
    /// hash.
    fn store(
        &self,
        name: &str,
        bytes: &[u8],
        seed: u64,
        inputs: BTreeMap<String, String>,
        notes: BTreeMap<String, String>,
    ) -> Result<String, CliError> {
        let meta = artifact::write_artifact(
            &self.path(name),
            bytes,
            &self.config_sha256,
            seed,
            inputs,
            notes,
        )?;
        Ok(meta.content_sha256)
    }

    fn cache_hit(&self, stage: &str, name: &str) {
        println!("{stage}: cache hit {}", self.path(name).display());
    }

    fn wrote(&self, stage: &str, name: &str) {
        println!("{stage}: wrote {}", self.path(name).display());
    }

    fn load_design(&self) -> Result<(Arc<Netlist>, String), CliError> {
        let (bytes, hash) = self.input(DESIGN_FILE, "gen-design")?;
        let text = String::from_utf8(bytes).map_err(internal)?;
        let netlist = parse_bench(&text).map_err(internal)?;
        Ok((Arc::new(netlist), hash))
    }

    fn load_rares(
        &self,
        netlist: &Netlist,
    ) -> Result<(RareNetSet, String), CliError> {
        let (bytes, hash) = self.input(RARE_FILE, "rare-nets")?;
        let text = String::from_utf8(bytes).map_err(internal)?;
        let rares = parse_rare_net_file(&text, netlist).map_err(internal)?;
        Ok((rares, hash))
    }

    fn load_charact(&self) -> Result<(CharacterizationFile, String), CliError> {
        let (bytes, hash) = self.input(CHARACT_FILE, "characterize")?;
        let file: CharacterizationFile = serde_json::from_slice(&bytes).map_err(internal)?;
        Ok((file, hash))
    }

    fn checker(&self, netlist: &Arc<Netlist>) -> CompatChecker {
        CompatChecker::new(netlist.clone(), self.config.sat_budget)
    }

    fn gen_design(&self) -> Result<(), CliError> {
        let spec = &self.config.design;
        let (netlist, flops, source, inputs) = match Profile::from_name(spec) {
            Some(profile) => (
                profile.generate(),
                Vec::new(),
                format!("profile:{}", profile.name()),
                BTreeMap::new(),
            ),
            None => {
                let path = Path::new(spec);
                let text = match std::fs::read_to_string(path) {
                    Ok(t) => t,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        return Err(CliError::Artifact(ArtifactError::Missing {
                            path: path.to_path_buf(),
                            produced_by: "a netlist file or a built-in profile name in `design`"
                                .to_string(),
                        }))
                    }
                    Err(e) => return Err(internal(e)),
                };
                let is_verilog = path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("v"));
                let (netlist, flops) = if is_verilog {
                    parse_verilog_full_scan(&text).map_err(internal)?
                } else {
                    parse_bench_full_scan(&text).map_err(internal)?
                };
                let inputs = BTreeMap::from([(
                    "source".to_string(),
                    artifact::sha256_hex(text.as_bytes()),
                )]);
                (netlist, flops, format!("file:{spec}"), inputs)
            }
        };
        if self.fresh(DESIGN_FILE, 0, &inputs) {
            self.cache_hit("gen-design", DESIGN_FILE);
            return Ok(());
        }
        let notes = BTreeMap::from([
            ("source".to_string(), source),
            ("gates".to_string(), netlist.num_gates().to_string()),
            (
                "inputs".to_string(),
                netlist.primary_inputs().len().to_string(),
            ),
            (
                "outputs".to_string(),
                netlist.primary_outputs().len().to_string(),
            ),
            ("scan_flops".to_string(), flops.len().to_string()),
        ]);
        self.store(
            DESIGN_FILE,
            netlist.emit_bench().as_bytes(),
            0,
            inputs.clone(),
            notes,
        )?;
        let flop_path = self.path(FLOPS_FILE);
        if flops.is_empty() {
            let _ = std::fs::remove_file(&flop_path);
            let _ = std::fs::remove_file(artifact::meta_path(&flop_path));
        } else {
            self.store(
                FLOPS_FILE,
                emit_flop_list(&netlist, &flops).as_bytes(),
                0,
                inputs,
                BTreeMap::new(),
            )?;
            self.wrote("gen-design", FLOPS_FILE);
        }
        self.wrote("gen-design", DESIGN_FILE);
        Ok(())
    }

    fn rare_nets(&self) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let inputs = BTreeMap::from([("design".to_string(), dhash)]);
        let seed = self.config.seeds.probability;
        if self.fresh(RARE_FILE, seed, &inputs) {
            self.cache_hit("rare-nets", RARE_FILE);
            return Ok(());
        }
        let probs = signal_probabilities(&netlist, self.config.probability_patterns, seed);
        let rares = identify_rare_nets(&netlist, &probs, self.config.theta);
        if rares.is_empty() {
            return Err(CliError::Internal(format!(
                "no rare nets below theta = {}; raise theta or pick a larger design",
                self.config.theta
            )));
        }
        let notes = BTreeMap::from([("num_rare".to_string(), rares.len().to_string())]);
        self.store(
            RARE_FILE,
            rare_nets_to_text(&netlist, &rares).as_bytes(),
            seed,
            inputs,
            notes,
        )?;
        self.wrote("rare-nets", RARE_FILE);
        println!("rare-nets: {} rare nets at theta {}", rares.len(), self.config.theta);
        Ok(())
    }

    fn characterize(&self) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let (rares, rhash) = self.load_rares(&netlist)?;
        let inputs = BTreeMap::from([
            ("design".to_string(), dhash.clone()),
            ("rare_nets".to_string(), rhash.clone()),
        ]);
        let seed = self.config.seeds.characterize;
        if self.fresh(CHARACT_FILE, seed, &inputs) {
            self.cache_hit("characterize", CHARACT_FILE);
            return Ok(());
        }
        let checker = self.checker(&netlist);
        let patterns = PatternSet::random(
            netlist.primary_inputs().len(),
            self.config.seed_patterns,
            self.config.seeds.pairs,
        );
        let sim = simulate(&netlist, &patterns).map_err(internal)?;
        seed_pairs_from_simulation(&checker, &rares, &patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(
            &checker,
            &rares,
            table,
            self.config.t_iterations,
            seed,
            self.config.exact_characterization,
        );
        let key = CharacterizationKey {
            netlist_sha256: dhash,
            rare_sha256: rhash,
            theta: self.config.theta,
            t_iterations: self.config.t_iterations,
            seed,
            exact: self.config.exact_characterization,
        };
        let json = serde_json::to_string(&data.to_file(key)).map_err(internal)?;
        let notes = BTreeMap::from([
            ("sets".to_string(), self.config.t_iterations.to_string()),
            ("rares".to_string(), rares.len().to_string()),
        ]);
        self.store(CHARACT_FILE, json.as_bytes(), seed, inputs, notes)?;
        self.wrote("characterize", CHARACT_FILE);
        Ok(())
    }

    fn train(&self) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let (rares, rhash) = self.load_rares(&netlist)?;
        let (cfile, chash) = self.load_charact()?;
        let inputs = BTreeMap::from([
            ("design".to_string(), dhash),
            ("rare_nets".to_string(), rhash),
            ("charact".to_string(), chash),
        ]);
        let seed = self.config.seeds.train;
        if self.fresh(POLICY_FILE, seed, &inputs) && self.fresh(TRAIN_LOG_FILE, seed, &inputs) {
            self.cache_hit("train", POLICY_FILE);
            return Ok(());
        }
        let data = CharacterizationData::from_file(&cfile);
        let checker = self.checker(&netlist);
        let started = Instant::now();
        let (policy, log) = train(
            &checker,
            &rares,
            &data,
            &self.config.train_config(),
            &self.config.reward_params(),
            seed,
        )
        .map_err(internal)?;
        let seconds = started.elapsed().as_secs_f64();
        let last = log.records.last();
        let notes = BTreeMap::from([
            ("train_seconds".to_string(), format!("{seconds:.3}")),
            ("episodes".to_string(), log.records.len().to_string()),
            ("timesteps".to_string(), log.timesteps.to_string()),
            (
                "final_mean".to_string(),
                last.map_or_else(|| "nan".to_string(), |r| format!("{:.3}", r.mean)),
            ),
            (
                "final_sigma".to_string(),
                last.map_or_else(|| "nan".to_string(), |r| format!("{:.3}", r.sigma)),
            ),
        ]);
        self.store(
            POLICY_FILE,
            &policy.to_bytes(),
            seed,
            inputs.clone(),
            notes.clone(),
        )?;
        self.store(TRAIN_LOG_FILE, log.to_jsonl().as_bytes(), seed, inputs, notes)?;
        self.wrote("train", POLICY_FILE);
        self.wrote("train", TRAIN_LOG_FILE);
        if let Some(r) = last {
            println!(
                "train: {} episodes, {} timesteps, rolling mean {:.1} sigma {:.1} in {seconds:.1}s",
                log.records.len(),
                log.timesteps,
                r.mean,
                r.sigma
            );
        }
        Ok(())
    }

    fn gen_ht(&self, kind: CorpusKind, against: &str) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let (rares, rhash) = self.load_rares(&netlist)?;
        let mut inputs = BTreeMap::from([
            ("design".to_string(), dhash.clone()),
            ("rare_nets".to_string(), rhash),
        ]);
        let seed = self.config.seeds.corpus;
        let out = corpus_file(kind);
        let t_wid = self.config.t_wid;
        let want = self.config.corpus_size;
        let mut notes = BTreeMap::new();

        let candidates: Vec<TriggerCandidate> = match kind {
            CorpusKind::Rl => {
                let (bytes, lhash) = self.input(TRAIN_LOG_FILE, "train")?;
                inputs.insert("train_log".to_string(), lhash);
                if self.fresh(&out, seed, &inputs) {
                    self.cache_hit("gen-ht", &out);
                    return Ok(());
                }
                let text = String::from_utf8(bytes).map_err(internal)?;
                let log = TrainingLog::from_jsonl(&text).map_err(internal)?;
                let checker = self.checker(&netlist);
                let extraction = extract_triggers(&log, &netlist, &checker, &rares, want);
                if extraction.candidates.is_empty() {
                    return Err(CliError::Internal(
                        "training log contains no evading terminal sets; train longer".into(),
                    ));
                }
                if extraction.shortfall() {
                    notes.insert(
                        "shortfall".to_string(),
                        format!("{} of {} requested", extraction.candidates.len(), want),
                    );
                }
                extraction.candidates
            }
            CorpusKind::Random => {
                if self.fresh(&out, seed, &inputs) {
                    self.cache_hit("gen-ht", &out);
                    return Ok(());
                }
                let checker = self.checker(&netlist);
                let mut picked = Vec::with_capacity(want);
                let mut draws = 0u64;
                for i in 0..want {
                    let (candidate, spent) = random_trigger(
                        &rares,
                        &checker,
                        t_wid,
                        mix(seed, i as u64),
                        self.config.random_max_draws,
                    )
                    .map_err(internal)?;
                    draws += spent;
                    picked.push(candidate);
                }
                notes.insert("draws".to_string(), draws.to_string());
                picked
            }
            CorpusKind::MinusRl => {
                let (cfile, chash) = self.load_charact()?;
                let (_, lhash) = self.input(TRAIN_LOG_FILE, "train")?;
                inputs.insert("charact".to_string(), chash);
                inputs.insert("train_log".to_string(), lhash);
                if self.fresh(&out, seed, &inputs) {
                    self.cache_hit("gen-ht", &out);
                    return Ok(());
                }
                let train_meta = artifact::read_meta(&self.path(TRAIN_LOG_FILE))?;
                let seconds: f64 = train_meta
                    .notes
                    .get("train_seconds")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| {
                        CliError::Internal(
                            "training log sidecar lacks train_seconds; re-run train".into(),
                        )
                    })?;
                let data = CharacterizationData::from_file(&cfile);
                let checker = self.checker(&netlist);
                let accepts = minus_rl_triggers(
                    &data,
                    &rares,
                    &checker,
                    t_wid,
                    seed,
                    StopRule::Duration(Duration::from_secs_f64(seconds)),
                )
                .map_err(internal)?;
                if accepts.is_empty() {
                    return Err(CliError::Internal(format!(
                        "trimmed random search accepted no uncovered satisfiable sets in {seconds:.1}s"
                    )));
                }
                notes.insert("accepted".to_string(), accepts.len().to_string());
                notes.insert("budget_seconds".to_string(), format!("{seconds:.3}"));
                limit_corpus(accepts, want, mix(seed, 0xa11))
            }
            CorpusKind::Evade => {
                let technique = Technique::from_name(against).ok_or_else(|| {
                    CliError::Config(ConfigError::Invalid(format!(
                        "unknown technique `{against}`"
                    )))
                })?;
                let pat_name = patterns_file(technique);
                let (bytes, phash) =
                    self.input(&pat_name, &format!("detect {}", technique.name()))?;
                inputs.insert(pat_name, phash);
                if self.fresh(&out, seed, &inputs) {
                    self.cache_hit("gen-ht", &out);
                    return Ok(());
                }
                let text = String::from_utf8(bytes).map_err(internal)?;
                let patterns = PatternFile::parse(&text)
                    .map_err(internal)?
                    .aligned_to(&netlist)
                    .map_err(internal)?;
                let checker = self.checker(&netlist);
                notes.insert("against".to_string(), technique.name().to_string());
                evading_triggers(
                    &netlist,
                    &rares,
                    &checker,
                    &patterns,
                    t_wid,
                    want,
                    seed,
                    self.config.evade_max_draws,
                )
                .map_err(internal)?
            }
        };

        let corpus = CorpusFile {
            provenance: kind.provenance(),
            design_sha256: dhash,
            entries: candidates
                .iter()
                .map(|c| CorpusEntry {
                    nets: c
                        .literals
                        .iter()
                        .map(|&(n, v)| (netlist.net_name(n).to_string(), u8::from(v)))
                        .collect(),
                    prob_product: c.prob_product,
                })
                .collect(),
        };
        notes.insert("triggers".to_string(), corpus.entries.len().to_string());
        let json = serde_json::to_string_pretty(&corpus).map_err(internal)?;
        self.store(&out, json.as_bytes(), seed, inputs, notes)?;
        self.wrote("gen-ht", &out);
        println!("gen-ht: {} {} triggers", corpus.entries.len(), kind.stem());
        Ok(())
    }

    fn insert(&self, only: Option<CorpusKind>) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let kinds = self.select_kinds(only, |k| self.path(&corpus_file(k)).exists(), || {
            ArtifactError::Missing {
                path: self.path(&corpus_file(CorpusKind::Rl)),
                produced_by: CorpusKind::Rl.producer(),
            }
        })?;
        for kind in kinds {
            let name = corpus_file(kind);
            let (bytes, chash) = self.input(&name, &kind.producer())?;
            let corpus: CorpusFile = serde_json::from_slice(&bytes).map_err(internal)?;
            if corpus.design_sha256 != dhash {
                return Err(CliError::StaleInput {
                    path: self.path(&name),
                    producer: kind.producer(),
                });
            }
            let inputs = BTreeMap::from([
                ("design".to_string(), dhash.clone()),
                ("corpus".to_string(), chash),
            ]);
            let manifest_name = ht_manifest_file(kind);
            let seed = self.config.seeds.insert;
            if self.fresh(&manifest_name, seed, &inputs) {
                self.cache_hit("insert", &manifest_name);
                continue;
            }
            let mut entries = Vec::with_capacity(corpus.entries.len());
            for (i, entry) in corpus.entries.iter().enumerate() {
                let candidate = candidate_from_entry(&netlist, entry)?;
                let instance = insert_trojan(
                    &netlist,
                    &candidate,
                    None,
                    mix(seed, i as u64),
                    kind.provenance(),
                )
                .map_err(internal)?;
                let bench_rel = format!("ht/{}/ht_{i:03}.bench", kind.stem());
                let desc_rel = format!("ht/{}/ht_{i:03}.json", kind.stem());
                let bench_text = instance.netlist.emit_bench();
                let desc_text =
                    serde_json::to_string_pretty(&instance.descriptor).map_err(internal)?;
                write_raw(&self.path(&bench_rel), bench_text.as_bytes())?;
                write_raw(&self.path(&desc_rel), desc_text.as_bytes())?;
                entries.push(InsertEntry {
                    bench: bench_rel,
                    descriptor: desc_rel,
                    trigger_net: instance.trigger_net,
                    payload_net: instance.payload_net,
                    added_gates: instance.added_gates,
                    bench_sha256: artifact::sha256_hex(bench_text.as_bytes()),
                    descriptor_sha256: artifact::sha256_hex(desc_text.as_bytes()),
                });
            }
            let manifest = InsertManifest {
                provenance: kind.provenance(),
                design_sha256: dhash.clone(),
                entries,
            };
            let json = serde_json::to_string_pretty(&manifest).map_err(internal)?;
            let notes = BTreeMap::from([(
                "inserted".to_string(),
                manifest.entries.len().to_string(),
            )]);
            self.store(&manifest_name, json.as_bytes(), seed, inputs, notes)?;
            self.wrote("insert", &manifest_name);
            println!(
                "insert: {} {} Trojans materialized",
                manifest.entries.len(),
                kind.stem()
            );
        }
        Ok(())
    }

    fn detect(&self, technique: &str) -> Result<(), CliError> {
        let technique = Technique::from_name(technique).ok_or_else(|| {
            CliError::Config(ConfigError::Invalid(format!(
                "unknown technique `{technique}`; expected one of {}",
                Technique::ALL.map(|t| t.name()).join(", ")
            )))
        })?;
        let (netlist, dhash) = self.load_design()?;
        let (rares, rhash) = self.load_rares(&netlist)?;
        let mut inputs = BTreeMap::from([
            ("design".to_string(), dhash),
            ("rare_nets".to_string(), rhash),
        ]);
        // The clique techniques reuse the characterization's pair table when
        // that artifact exists; otherwise they rebuild it internally.
        let charact = if self.path(CHARACT_FILE).exists() {
            let (cfile, chash) = self.load_charact()?;
            inputs.insert("charact".to_string(), chash);
            Some(CharacterizationData::from_file(&cfile))
        } else {
            None
        };
        let det_config = self.config.detector_config(technique);
        let pat_name = patterns_file(technique);
        let man_name = detect_manifest_file(technique);
        if self.fresh(&pat_name, det_config.seed, &inputs)
            && self.fresh(&man_name, det_config.seed, &inputs)
        {
            self.cache_hit("detect", &pat_name);
            return Ok(());
        }
        let checker = self.checker(&netlist);
        let outcome = run_detector(
            &checker,
            &rares,
            charact.as_ref().map(|d| d.pair_table()),
            &det_config,
        )
        .map_err(internal)?;
        let names: Vec<String> = netlist
            .primary_inputs()
            .iter()
            .map(|&pi| netlist.net_name(pi).to_string())
            .collect();
        let text = outcome.patterns.to_text(&names);
        let notes = BTreeMap::from([(
            "num_patterns".to_string(),
            outcome.manifest.num_patterns.to_string(),
        )]);
        self.store(
            &pat_name,
            text.as_bytes(),
            det_config.seed,
            inputs.clone(),
            notes.clone(),
        )?;
        let man_json = serde_json::to_string_pretty(&outcome.manifest).map_err(internal)?;
        self.store(&man_name, man_json.as_bytes(), det_config.seed, inputs, notes)?;
        self.wrote("detect", &pat_name);
        println!(
            "detect: {} emitted {} patterns",
            technique.name(),
            outcome.manifest.num_patterns
        );
        Ok(())
    }

    fn evaluate(&self, only: Option<CorpusKind>) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let kinds = self.select_kinds(only, |k| self.path(&ht_manifest_file(k)).exists(), || {
            ArtifactError::Missing {
                path: self.path(&ht_manifest_file(CorpusKind::Rl)),
                produced_by: "insert".to_string(),
            }
        })?;
        let mut techniques = Vec::new();
        for technique in Technique::ALL {
            if self.path(&patterns_file(technique)).exists() {
                techniques.push(technique);
            }
        }
        if techniques.is_empty() {
            return Err(CliError::Artifact(ArtifactError::Missing {
                path: self.path(&patterns_file(Technique::Tarmac)),
                produced_by: "detect tarmac".to_string(),
            }));
        }
        let mut pattern_sets = Vec::new();
        let mut pattern_hashes = BTreeMap::new();
        for &technique in &techniques {
            let pat_name = patterns_file(technique);
            let (bytes, phash) = self.input(&pat_name, &format!("detect {}", technique.name()))?;
            let text = String::from_utf8(bytes).map_err(internal)?;
            let patterns = PatternFile::parse(&text)
                .map_err(internal)?
                .aligned_to(&netlist)
                .map_err(internal)?;
            let man_name = detect_manifest_file(technique);
            let (man_bytes, mhash) =
                self.input(&man_name, &format!("detect {}", technique.name()))?;
            let manifest: DetectorManifest =
                serde_json::from_slice(&man_bytes).map_err(internal)?;
            pattern_hashes.insert(pat_name, phash);
            pattern_hashes.insert(man_name, mhash);
            pattern_sets.push((technique, patterns, manifest));
        }
        for kind in kinds {
            let man_name = ht_manifest_file(kind);
            let (bytes, mhash) = self.input(&man_name, "insert")?;
            let manifest: InsertManifest = serde_json::from_slice(&bytes).map_err(internal)?;
            if manifest.design_sha256 != dhash {
                return Err(CliError::StaleInput {
                    path: self.path(&man_name),
                    producer: "insert".to_string(),
                });
            }
            let mut descriptors = Vec::with_capacity(manifest.entries.len());
            let mut infected = Vec::with_capacity(manifest.entries.len());
            let mut ht_names = Vec::with_capacity(manifest.entries.len());
            for entry in &manifest.entries {
                let desc_text = read_listed(&self.path(&entry.descriptor), &entry.descriptor_sha256)?;
                descriptors.push(serde_json::from_str(&desc_text).map_err(internal)?);
                let bench_text = read_listed(&self.path(&entry.bench), &entry.bench_sha256)?;
                infected.push(parse_bench(&bench_text).map_err(internal)?);
                let stem = Path::new(&entry.bench)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or(&entry.bench)
                    .to_string();
                ht_names.push(stem);
            }
            let mut detectors = Vec::new();
            let mut union = PatternSet::new(netlist.primary_inputs().len());
            for (technique, patterns, det_manifest) in &pattern_sets {
                let activated =
                    activation_flags(&netlist, &descriptors, patterns).map_err(internal)?;
                let sensitivities = if *technique == Technique::MaxSense {
                    Some(self.sensitivities(&netlist, &infected, &ht_names, patterns)?)
                } else {
                    None
                };
                detectors.push(DetectorEval::new(
                    technique.name().to_string(),
                    Some(det_manifest.config.clone()),
                    patterns.len(),
                    activated,
                    sensitivities,
                ));
                union.extend_from(patterns);
            }
            let union = union.dedup();
            let activated = activation_flags(&netlist, &descriptors, &union).map_err(internal)?;
            detectors.push(DetectorEval::new(
                "COMBINED".to_string(),
                None,
                union.len(),
                activated,
                None,
            ));
            let mut report = EvalReport::new(
                self.config.design.clone(),
                kind.stem().to_string(),
                ht_names,
                detectors,
                vec![format!("config_sha256={}", self.config_sha256)],
            );
            report.sensitivity_threshold = self.config.sensitivity_threshold;
            report.validate().map_err(internal)?;
            let mut inputs = pattern_hashes.clone();
            inputs.insert("design".to_string(), dhash.clone());
            inputs.insert(man_name, mhash);
            let out = eval_file(kind);
            let json = serde_json::to_string_pretty(&report).map_err(internal)?;
            self.store(&out, json.as_bytes(), 0, inputs, BTreeMap::new())?;
            self.wrote("evaluate", &out);
            for eval in &report.detectors {
                println!(
                    "evaluate: {} vs {}: activation {:.1}% success {:.1}%",
                    kind.stem(),
                    eval.detector,
                    eval.activation_rate,
                    eval.attack_success_rate
                );
            }
        }
        Ok(())
    }

    fn sensitivities(
        &self,
        golden: &Netlist,
        infected: &[Netlist],
        ht_names: &[String],
        patterns: &PatternSet,
    ) -> Result<Vec<SensitivityOutcome>, CliError> {
        use rayon::prelude::*;
        let threshold = self.config.sensitivity_threshold;
        infected
            .par_iter()
            .zip(ht_names)
            .map(|(netlist, name)| {
                match side_channel_sensitivity(golden, netlist, patterns) {
                    Ok(s) => Ok(SensitivityOutcome {
                        ht: name.clone(),
                        sensitivity: Some(s.max_percent),
                        detected: Some(classify_sensitivity(s.max_percent, threshold)),
                    }),
                    Err(EvalError::AllPairsSkipped { .. }) => Ok(SensitivityOutcome {
                        ht: name.clone(),
                        sensitivity: None,
                        detected: None,
                    }),
                    Err(e) => Err(internal(e)),
                }
            })
            .collect()
    }

    fn report(&self) -> Result<(), CliError> {
        let mut inputs = BTreeMap::new();
        let mut tables = Vec::new();
        for kind in CorpusKind::ALL {
            let name = eval_file(kind);
            if !self.path(&name).exists() {
                continue;
            }
            let (bytes, hash) = self.input(&name, "evaluate")?;
            let report: EvalReport = serde_json::from_slice(&bytes).map_err(internal)?;
            report.validate().map_err(internal)?;
            inputs.insert(name, hash);
            tables.push(report.render_table());
        }
        if tables.is_empty() {
            return Err(CliError::Artifact(ArtifactError::Missing {
                path: self.path(&eval_file(CorpusKind::Rl)),
                produced_by: "evaluate".to_string(),
            }));
        }
        let text = tables.join("\n");
        self.store(REPORT_FILE, text.as_bytes(), 0, inputs, BTreeMap::new())?;
        print!("{text}");
        self.wrote("report", REPORT_FILE);
        Ok(())
    }

    fn export_cnf(&self, out: Option<PathBuf>, assume: Option<&str>) -> Result<(), CliError> {
        let (netlist, dhash) = self.load_design()?;
        let cnf = encode_netlist(&netlist);
        let assumptions = parse_assumptions(&netlist, assume)?;
        let text = cnf.to_dimacs(&assumptions, Some(&netlist));
        let inputs = BTreeMap::from([("design".to_string(), dhash)]);
        match out {
            Some(path) => {
                write_raw(&path, text.as_bytes())?;
                println!("export-cnf: wrote {}", path.display());
            }
            None => {
                self.store(CNF_FILE, text.as_bytes(), 0, inputs, BTreeMap::new())?;
                self.wrote("export-cnf", CNF_FILE);
            }
        }
        Ok(())
    }

    /// Explicit corpus selection requires that corpus; the default takes
    /// every corpus whose artifact exists and insists on at least one.
    fn select_kinds(
        &self,
        only: Option<CorpusKind>,
        present: impl Fn(CorpusKind) -> bool,
        missing: impl Fn() -> ArtifactError,
    ) -> Result<Vec<CorpusKind>, CliError> {
        match only {
            Some(kind) => Ok(vec![kind]),
            None => {
                let kinds: Vec<CorpusKind> =
                    CorpusKind::ALL.into_iter().filter(|&k| present(k)).collect();
                if kinds.is_empty() {
                    return Err(CliError::Artifact(missing()));
                }
                Ok(kinds)
            }
        }
    }
}

/// Downsample an accepted pool to the corpus size, keeping draw order.
fn limit_corpus(accepts: Vec<TriggerCandidate>, want: usize, seed: u64) -> Vec<TriggerCandidate> {
    if accepts.len() <= want {
        return accepts;
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, accepts.len(), want).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| accepts[i].clone()).collect()
}

fn candidate_from_entry(
    netlist: &Netlist,
    entry: &CorpusEntry,
) -> Result<TriggerCandidate, CliError> {
    let mut literals = Vec::with_capacity(entry.nets.len());
    for (name, value) in &entry.nets {
        let id = netlist
            .net_id(name)
            .ok_or_else(|| CliError::Internal(format!("corpus names unknown net `{name}`")))?;
        literals.push((id, *value != 0));
    }
    literals.sort_unstable_by_key(|&(n, _)| n);
    Ok(TriggerCandidate {
        literals,
        prob_product: entry.prob_product,
    })
}

/// Parse "net=0,net=1" assumption text into CNF literals.
fn parse_assumptions(netlist: &Netlist, assume: Option<&str>) -> Result<Vec<Lit>, CliError> {
    let Some(text) = assume else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (name, value) = token.split_once('=').ok_or_else(|| {
            CliError::Config(ConfigError::Invalid(format!(
                "assumption `{token}` is not of the form net=0 or net=1"
            )))
        })?;
        let positive = match value.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(CliError::Config(ConfigError::Invalid(format!(
                    "assumption value `{other}` must be 0 or 1"
                ))))
            }
        };
        let id = netlist.net_id(name.trim()).ok_or_else(|| {
            CliError::Config(ConfigError::Invalid(format!(
                "assumption names unknown net `{name}`"
            )))
        })?;
        out.push(Lit::new(id.index() as u32, positive));
    }
    Ok(out)
}

/// Read a file whose expected hash is carried by a manifest instead of a
/// sidecar.
fn read_listed(path: &Path, expected_sha256: &str) -> Result<String, CliError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::Artifact(ArtifactError::Missing {
                path: path.to_path_buf(),
                produced_by: "insert".to_string(),
            }))
        }
        Err(e) => return Err(internal(e)),
    };
    let actual = artifact::sha256_hex(&bytes);
    if actual != expected_sha256 {
        return Err(CliError::Artifact(ArtifactError::HashMismatch {
            path: path.to_path_buf(),
            expected: expected_sha256.to_string(),
            actual,
        }));
    }
    String::from_utf8(bytes).map_err(internal)
}

fn write_raw(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(internal)?;
    }
    std::fs::write(path, bytes).map_err(internal)
}
