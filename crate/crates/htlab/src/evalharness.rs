//! Attack and defense metrics.
//!
//! Two figures of merit: the HT activation rate of a pattern set (logic
//! testing) and the side-channel sensitivity of an infected netlist under a
//! pattern sequence (switching-based detection). Reports aggregate both per
//! detector over an HT corpus, in machine-readable JSON plus a stable text
//! table; every aggregate is recomputable from the persisted raw flags.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::DetectorConfig;
use crate::logicsim::{simulate, switching_counts, PatternSet, SimError};
use crate::netlist::Netlist;
use crate::trojan::{TrojanDescriptor, TrojanError};

/// An HT is classified detected by side-channel analysis iff its
/// sensitivity strictly exceeds this percentage.
pub const SENSITIVITY_THRESHOLD: f64 = 10.0;

pub const EVAL_REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("switching metrics need at least two patterns")]
    TooFewPatterns,
    #[error("sensitivity undefined: all {pairs} pattern pairs had zero golden switching")]
    AllPairsSkipped { pairs: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trojan(#[from] TrojanError),
}

/// Per-HT activation flags: an HT counts activated iff some pattern drives
/// every trigger literal to its rare value. Trigger literals are original
/// golden nets, so one golden simulation covers the whole corpus.
pub fn activation_flags(
    netlist: &Netlist,
    hts: &[TrojanDescriptor],
    patterns: &PatternSet,
) -> Result<Vec<bool>, EvalError> {
    let sim = simulate(netlist, patterns)?;
    let words = patterns.len().div_ceil(64);
    hts.par_iter()
        .map(|descriptor| {
            let candidate = descriptor.candidate(netlist)?;
            let mut acc = vec![u64::MAX; words];
            if words > 0 && patterns.len() % 64 != 0 {
                acc[words - 1] = (1u64 << (patterns.len() % 64)) - 1;
            }
            for &(net, value) in &candidate.literals {
                let row = sim.at_value_row(net, value);
                for (a, r) in acc.iter_mut().zip(&row) {
                    *a &= r;
                }
            }
            Ok(acc.iter().any(|&w| w != 0))
        })
        .collect()
}

/// Percentage of activated HTs.
pub fn activation_rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    100.0 * flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

/// Attack success is the complement of activation.
pub fn attack_success_rate(activation: f64) -> f64 {
    100.0 - activation
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub max_percent: f64,
    /// Index i of the peak pair (patterns i, i+1).
    pub peak_pair: usize,
    pub skipped_pairs: usize,
}

/// Core sensitivity arithmetic over per-pair switching totals:
/// max |sw_ht - sw_g| / sw_g * 100, skipping pairs with sw_g = 0.
pub fn sensitivity_from_counts(sw_g: &[u64], sw_ht: &[u64]) -> Result<Sensitivity, EvalError> {
    assert_eq!(sw_g.len(), sw_ht.len(), "pair count mismatch");
    if sw_g.is_empty() {
        return Err(EvalError::TooFewPatterns);
    }
    let mut best: Option<(usize, f64)> = None;
    let mut skipped = 0usize;
    for (i, (&g, &h)) in sw_g.iter().zip(sw_ht).enumerate() {
        if g == 0 {
            skipped += 1;
            continue;
        }
        let pct = (h.abs_diff(g)) as f64 / g as f64 * 100.0;
        if best.is_none_or(|(_, b)| pct > b) {
            best = Some((i, pct));
        }
    }
    match best {
        Some((peak_pair, max_percent)) => Ok(Sensitivity {
            max_percent,
            peak_pair,
            skipped_pairs: skipped,
        }),
        None => Err(EvalError::AllPairsSkipped { pairs: sw_g.len() }),
    }
}

/// Side-channel sensitivity of an infected netlist: worst-case relative
/// switching deviation over consecutive pattern pairs. Golden toggles are
/// counted over the golden netlist's nets, infected toggles over the
/// infected netlist's nets (trigger gates included).
pub fn side_channel_sensitivity(
    golden: &Netlist,
    infected: &Netlist,
    patterns: &PatternSet,
) -> Result<Sensitivity, EvalError> {
    if patterns.len() < 2 {
        return Err(EvalError::TooFewPatterns);
    }
    let golden_sim = simulate(golden, patterns)?;
    let infected_sim = simulate(infected, patterns)?;
    let sw_g = switching_counts(&golden_sim, None);
    let sw_ht = switching_counts(&infected_sim, None);
    sensitivity_from_counts(&sw_g, &sw_ht)
}

/// Detected iff sensitivity strictly exceeds the threshold.
pub fn classify_sensitivity(sensitivity: f64, threshold: f64) -> bool {
    sensitivity > threshold
}

/// Per-HT side-channel outcome; `sensitivity` is absent when every pattern
/// pair had zero golden switching.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityOutcome {
    pub ht: String,
    pub sensitivity: Option<f64>,
    pub detected: Option<bool>,
}

/// One detector's results over the corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorEval {
    pub detector: String,
    pub config: Option<DetectorConfig>,
    pub num_patterns: usize,
    /// Per-HT activation flags, aligned with `EvalReport::ht_names`.
    pub activated: Vec<bool>,
    pub activation_rate: f64,
    pub attack_success_rate: f64,
    pub sensitivities: Option<Vec<SensitivityOutcome>>,
}

impl DetectorEval {
    pub fn new(
        detector: String,
        config: Option<DetectorConfig>,
        num_patterns: usize,
        activated: Vec<bool>,
        sensitivities: Option<Vec<SensitivityOutcome>>,
    ) -> DetectorEval {
        let rate = activation_rate(&activated);
        DetectorEval {
            detector,
            config,
            num_patterns,
            activated,
            activation_rate: rate,
            attack_success_rate: attack_success_rate(rate),
            sensitivities,
        }
    }

    fn defined_sensitivities(&self) -> Vec<f64> {
        self.sensitivities
            .as_ref()
            .map(|s| s.iter().filter_map(|o| o.sensitivity).collect())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub design: String,
    pub corpus: String,
    pub sensitivity_threshold: f64,
    pub ht_names: Vec<String>,
    pub detectors: Vec<DetectorEval>,
    pub notes: Vec<String>,
}

#[derive(Debug, Error)]
#[error("report inconsistency: {0}")]
pub struct ReportInconsistency(String);

impl EvalReport {
    pub fn new(
        design: String,
        corpus: String,
        ht_names: Vec<String>,
        detectors: Vec<DetectorEval>,
        notes: Vec<String>,
    ) -> EvalReport {
        EvalReport {
            version: EVAL_REPORT_VERSION,
            design,
            corpus,
            sensitivity_threshold: SENSITIVITY_THRESHOLD,
            ht_names,
            detectors,
            notes,
        }
    }

    /// Recompute every aggregate from the raw flags and compare.
    pub fn validate(&self) -> Result<(), ReportInconsistency> {
        for eval in &self.detectors {
            if eval.activated.len() != self.ht_names.len() {
                return Err(ReportInconsistency(format!(
                    "{}: {} flags for {} hts",
                    eval.detector,
                    eval.activated.len(),
                    self.ht_names.len()
                )));
            }
            let rate = activation_rate(&eval.activated);
            if (rate - eval.activation_rate).abs() > 1e-9 {
                return Err(ReportInconsistency(format!(
                    "{}: stored activation rate {} != recomputed {}",
                    eval.detector, eval.activation_rate, rate
                )));
            }
            if (eval.attack_success_rate - attack_success_rate(rate)).abs() > 1e-9 {
                return Err(ReportInconsistency(format!(
                    "{}: success rate does not complement activation",
                    eval.detector
                )));
            }
            if let Some(sens) = &eval.sensitivities {
                for o in sens {
                    let want = o
                        .sensitivity
                        .map(|s| classify_sensitivity(s, self.sensitivity_threshold));
                    if want != o.detected {
                        return Err(ReportInconsistency(format!(
                            "{}: {} classification disagrees with threshold",
                            eval.detector, o.ht
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Stable text rendering; equal reports render byte-identically.
    pub fn render_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "eval report v{}", self.version);
        let _ = writeln!(
            out,
            "design {}  corpus {}  hts {}  sensitivity-threshold {}%",
            self.design,
            self.corpus,
            self.ht_names.len(),
            self.sensitivity_threshold
        );
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "logic testing");
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>10} {:>12} {:>9}",
            "detector", "patterns", "activated", "activation%", "success%"
        );
        for eval in &self.detectors {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>10} {:>12.2} {:>9.2}",
                eval.detector,
                eval.num_patterns,
                eval.activated.iter().filter(|&&f| f).count(),
                eval.activation_rate,
                eval.attack_success_rate
            );
        }
        let with_sens: Vec<&DetectorEval> = self
            .detectors
            .iter()
            .filter(|e| e.sensitivities.is_some())
            .collect();
        if !with_sens.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "side channel");
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>9} {:>9} {:>7} {:>9}",
                "detector", "mean%", "median%", "detected", "evaded", "undef"
            );
            for eval in with_sens {
                let values = eval.defined_sensitivities();
                let outcomes = eval.sensitivities.as_ref().expect("filtered");
                let detected = outcomes.iter().filter(|o| o.detected == Some(true)).count();
                let evaded = outcomes.iter().filter(|o| o.detected == Some(false)).count();
                let undefined = outcomes.iter().filter(|o| o.detected.is_none()).count();
                let _ = writeln!(
                    out,
                    "{:<12} {:>9.2} {:>9.2} {:>9} {:>7} {:>9}",
                    eval.detector,
                    mean(&values),
                    median(&values),
                    detected,
                    evaded,
                    undefined
                );
            }
        }
        out
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN sensitivities"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}
