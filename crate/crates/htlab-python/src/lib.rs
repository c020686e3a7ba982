//! Python bindings: netlists, compatibility checking, characterization,
//! policy training, Trojan insertion, and detection from one module.
//!
//! Triggers cross the boundary as `[(net_name, rare_value)]` lists and
//! patterns as the text pattern-file format, so Python callers never handle
//! internal ids.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use htlab::charact::{
    build_pair_table, characterize, seed_pairs_from_simulation, CharacterizationData,
};
use htlab::designgen::Profile;
use htlab::detectors::{run_detector, DetectorConfig, Technique};
use htlab::evalharness::{activation_flags, activation_rate, side_channel_sensitivity};
use htlab::logicsim::{
    identify_rare_nets, signal_probabilities, simulate, PatternFile, PatternSet, RareNetSet,
};
use htlab::netlist::{parse_bench, Netlist as CoreNetlist};
use htlab::rlagent::{extract_triggers, train, RewardParams, TrainConfig, TrainingLog};
use htlab::satcore::{encode_netlist, CompatChecker, CompatQuery, CompatVerdict};
use htlab::trojan::{
    insert_trojan, random_trigger, Provenance, TriggerCandidate, TriggerLiteral, TrojanDescriptor,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Immutable combinational netlist.
#[pyclass(name = "Netlist", frozen)]
pub struct PyNetlist {
    inner: Arc<CoreNetlist>,
}

#[pymethods]
impl PyNetlist {
    /// Parse bench-format text.
    #[staticmethod]
    fn parse_bench(text: &str) -> PyResult<PyNetlist> {
        Ok(PyNetlist {
            inner: Arc::new(parse_bench(text).map_err(value_err)?),
        })
    }

    /// Generate a built-in design profile by name.
    #[staticmethod]
    fn profile(name: &str) -> PyResult<PyNetlist> {
        let profile = Profile::from_name(name).ok_or_else(|| {
            value_err(format!(
                "unknown profile `{name}`; available: {}",
                Profile::ALL.map(|p| p.name()).join(", ")
            ))
        })?;
        Ok(PyNetlist {
            inner: Arc::new(profile.generate()),
        })
    }

    #[getter]
    fn num_gates(&self) -> usize {
        self.inner.num_gates()
    }

    #[getter]
    fn num_inputs(&self) -> usize {
        self.inner.primary_inputs().len()
    }

    #[getter]
    fn num_outputs(&self) -> usize {
        self.inner.primary_outputs().len()
    }

    fn input_names(&self) -> Vec<String> {
        self.inner
            .primary_inputs()
            .iter()
            .map(|&n| self.inner.net_name(n).to_string())
            .collect()
    }

    fn output_names(&self) -> Vec<String> {
        self.inner
            .primary_outputs()
            .iter()
            .map(|&n| self.inner.net_name(n).to_string())
            .collect()
    }

    fn emit_bench(&self) -> String {
        self.inner.emit_bench()
    }

    /// Tseitin encoding as DIMACS text with net-name comments.
    fn to_dimacs(&self) -> String {
        encode_netlist(&self.inner).to_dimacs(&[], Some(&self.inner))
    }

    /// Simulate bit-string input rows; returns one output bit-string per row.
    fn simulate(&self, patterns: Vec<String>) -> PyResult<Vec<String>> {
        let n = self.inner.primary_inputs().len();
        let mut set = PatternSet::new(n);
        for row in &patterns {
            if row.len() != n {
                return Err(value_err(format!(
                    "pattern `{row}` has {} bits, netlist has {n} inputs",
                    row.len()
                )));
            }
            let bits: Vec<bool> = row
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(value_err(format!("invalid bit `{other}`"))),
                })
                .collect::<PyResult<_>>()?;
            set.push(&bits);
        }
        let sim = simulate(&self.inner, &set).map_err(value_err)?;
        Ok((0..set.len())
            .map(|p| {
                self.inner
                    .primary_outputs()
                    .iter()
                    .map(|&o| if sim.value(o, p) { '1' } else { '0' })
                    .collect()
            })
            .collect())
    }

    /// Estimated probability of each net being 1, indexed like `net_names`.
    fn signal_probabilities(&self, samples: usize, seed: u64) -> Vec<f64> {
        signal_probabilities(&self.inner, samples, seed)
    }

    /// Nets below the rareness threshold as (name, rare_value, probability).
    fn rare_nets(&self, theta: f64, samples: usize, seed: u64) -> Vec<(String, u8, f64)> {
        let probs = signal_probabilities(&self.inner, samples, seed);
        identify_rare_nets(&self.inner, &probs, theta)
            .iter()
            .map(|r| {
                (
                    self.inner.net_name(r.net).to_string(),
                    u8::from(r.rare_value),
                    r.prob,
                )
            })
            .collect()
    }
}

/// Stateful pipeline: rare nets, compatibility oracle, characterization,
/// policy training, and detection for one design.
#[pyclass(name = "Workbench")]
pub struct PyWorkbench {
    netlist: Arc<CoreNetlist>,
    rares: RareNetSet,
    checker: CompatChecker,
    data: Option<CharacterizationData>,
    log: Option<TrainingLog>,
    t_wid: usize,
}

impl PyWorkbench {
    fn candidate(&self, trigger: &[(String, u8)]) -> PyResult<TriggerCandidate> {
        let mut literals = Vec::with_capacity(trigger.len());
        for (name, value) in trigger {
            let id = self
                .netlist
                .net_id(name)
                .ok_or_else(|| value_err(format!("unknown net `{name}`")))?;
            literals.push((id, *value != 0));
        }
        literals.sort_unstable_by_key(|&(n, _)| n);
        let prob_product = literals
            .iter()
            .map(|&(n, _)| {
                self.rares
                    .position(n)
                    .map_or(1.0, |i| self.rares.get(i).prob)
            })
            .product();
        Ok(TriggerCandidate {
            literals,
            prob_product,
        })
    }

    fn query(&self, trigger: &[(String, u8)]) -> PyResult<CompatQuery> {
        let candidate = self.candidate(trigger)?;
        CompatQuery::new(candidate.literals).map_err(value_err)
    }

    fn data(&self) -> PyResult<&CharacterizationData> {
        self.data
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("run characterize first"))
    }

    fn names_of(&self, candidate: &TriggerCandidate) -> Vec<(String, u8)> {
        candidate
            .literals
            .iter()
            .map(|&(n, v)| (self.netlist.net_name(n).to_string(), u8::from(v)))
            .collect()
    }
}

#[pymethods]
impl PyWorkbench {
    #[new]
    #[pyo3(signature = (netlist, theta, samples, seed, t_wid = 4, sat_budget = 1_000_000))]
    fn new(
        netlist: &PyNetlist,
        theta: f64,
        samples: usize,
        seed: u64,
        t_wid: usize,
        sat_budget: u64,
    ) -> PyResult<PyWorkbench> {
        let inner = Arc::clone(&netlist.inner);
        let probs = signal_probabilities(&inner, samples, seed);
        let rares = identify_rare_nets(&inner, &probs, theta);
        if rares.is_empty() {
            return Err(value_err(format!("no rare nets below theta = {theta}")));
        }
        let checker = CompatChecker::new(Arc::clone(&inner), sat_budget);
        Ok(PyWorkbench {
            netlist: inner,
            rares,
            checker,
            data: None,
            log: None,
            t_wid,
        })
    }

    #[getter]
    fn num_rare_nets(&self) -> usize {
        self.rares.len()
    }

    fn rare_net_names(&self) -> Vec<(String, u8)> {
        self.rares
            .iter()
            .map(|r| (self.netlist.net_name(r.net).to_string(), u8::from(r.rare_value)))
            .collect()
    }

    /// Joint satisfiability verdict for a trigger: "compatible",
    /// "incompatible", or "unknown".
    fn check(&self, trigger: Vec<(String, u8)>) -> PyResult<String> {
        let verdict = match self.checker.check(&self.query(&trigger)?) {
            CompatVerdict::Compatible => "compatible",
            CompatVerdict::Incompatible => "incompatible",
            CompatVerdict::Unknown => "unknown",
        };
        Ok(verdict.to_string())
    }

    /// Input assignment driving every trigger literal rare, as a bit string
    /// in primary-input order; None when not compatible.
    fn witness(&self, trigger: Vec<(String, u8)>) -> PyResult<Option<String>> {
        let query = self.query(&trigger)?;
        if self.checker.check(&query) != CompatVerdict::Compatible {
            return Ok(None);
        }
        Ok(self.checker.witness(&query).map(|w| {
            (0..w.num_inputs())
                .map(|i| if w.get(0, i) { '1' } else { '0' })
                .collect()
        }))
    }

    /// Run the randomized compatible-set characterization; returns the
    /// number of sets.
    #[pyo3(signature = (t_iterations, seed, seed_patterns = 1024, exact = false))]
    fn characterize(
        &mut self,
        t_iterations: usize,
        seed: u64,
        seed_patterns: usize,
        exact: bool,
    ) -> PyResult<usize> {
        let patterns = PatternSet::random(
            self.netlist.primary_inputs().len(),
            seed_patterns,
            seed ^ 0x5eed,
        );
        let sim = simulate(&self.netlist, &patterns).map_err(value_err)?;
        seed_pairs_from_simulation(&self.checker, &self.rares, &patterns, &sim);
        let table = build_pair_table(&self.checker, &self.rares);
        let data = characterize(&self.checker, &self.rares, table, t_iterations, seed, exact);
        let sets = data.sets().len();
        self.data = Some(data);
        Ok(sets)
    }

    /// True when some characterized compatible set contains the trigger.
    fn covered(&self, trigger: Vec<(String, u8)>) -> PyResult<bool> {
        let data = self.data()?;
        let candidate = self.candidate(&trigger)?;
        let indices = candidate
            .rare_indices(&self.rares)
            .ok_or_else(|| value_err("trigger literals must be rare nets at rare polarity"))?;
        Ok(data.covered(&indices))
    }

    /// Train the trigger-construction policy; returns (episodes, final
    /// rolling mean, final rolling sigma).
    #[pyo3(signature = (max_timesteps, seed))]
    fn train_policy(&mut self, max_timesteps: u64, seed: u64) -> PyResult<(usize, f64, f64)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("run characterize first"))?;
        let config = TrainConfig {
            max_timesteps,
            ..TrainConfig::default()
        };
        let reward = RewardParams {
            t_wid: self.t_wid,
            ..RewardParams::default()
        };
        let (_, log) = train(&self.checker, &self.rares, data, &config, &reward, seed)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let summary = log
            .records
            .last()
            .map(|r| (log.records.len(), r.mean, r.sigma))
            .unwrap_or((0, f64::NAN, f64::NAN));
        self.log = Some(log);
        Ok(summary)
    }

    /// Distinct evading triggers recorded during training, newest first.
    fn extract_triggers(&self, count: usize) -> PyResult<Vec<Vec<(String, u8)>>> {
        let log = self
            .log
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("run train_policy first"))?;
        let extraction = extract_triggers(log, &self.netlist, &self.checker, &self.rares, count);
        Ok(extraction
            .candidates
            .iter()
            .map(|c| self.names_of(c))
            .collect())
    }

    /// Uniformly sampled jointly-satisfiable trigger of the given width.
    #[pyo3(signature = (t_wid, seed, max_draws = 100_000))]
    fn random_trigger(&self, t_wid: usize, seed: u64, max_draws: u64) -> PyResult<Vec<(String, u8)>> {
        let (candidate, _) = random_trigger(&self.rares, &self.checker, t_wid, seed, max_draws)
            .map_err(value_err)?;
        Ok(self.names_of(&candidate))
    }

    /// Insert a trigger with an XOR payload at a random legal target;
    /// returns (infected bench text, descriptor JSON).
    fn insert(&self, trigger: Vec<(String, u8)>, seed: u64) -> PyResult<(String, String)> {
        let candidate = self.candidate(&trigger)?;
        let instance = insert_trojan(&self.netlist, &candidate, None, seed, Provenance::Rl)
            .map_err(value_err)?;
        let descriptor = serde_json::to_string_pretty(&instance.descriptor).map_err(value_err)?;
        Ok((instance.netlist.emit_bench(), descriptor))
    }

    /// Run a detection technique; returns its patterns in pattern-file text.
    #[pyo3(signature = (technique, pattern_budget, seed))]
    fn detect(&self, technique: &str, pattern_budget: usize, seed: u64) -> PyResult<String> {
        let technique = Technique::from_name(technique).ok_or_else(|| {
            value_err(format!(
                "unknown technique `{technique}`; available: {}",
                Technique::ALL.map(|t| t.name()).join(", ")
            ))
        })?;
        let config = DetectorConfig {
            pattern_budget,
            seed,
            ..DetectorConfig::new(technique, seed)
        };
        let outcome = run_detector(
            &self.checker,
            &self.rares,
            self.data.as_ref().map(|d| d.pair_table()),
            &config,
        )
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let names: Vec<String> = self
            .netlist
            .primary_inputs()
            .iter()
            .map(|&pi| self.netlist.net_name(pi).to_string())
            .collect();
        Ok(outcome.patterns.to_text(&names))
    }

    /// Percentage of the given triggers that no pattern fully activates.
    fn attack_success(
        &self,
        triggers: Vec<Vec<(String, u8)>>,
        patterns_text: &str,
    ) -> PyResult<f64> {
        let patterns = PatternFile::parse(patterns_text)
            .map_err(value_err)?
            .aligned_to(&self.netlist)
            .map_err(value_err)?;
        let descriptors: Vec<TrojanDescriptor> = triggers
            .iter()
            .map(|t| TrojanDescriptor {
                trigger: t
                    .iter()
                    .map(|(name, value)| TriggerLiteral {
                        net: name.clone(),
                        rare_value: *value,
                    })
                    .collect(),
                payload_target: String::new(),
                seed: 0,
                provenance: Provenance::Rl,
            })
            .collect();
        let flags =
            activation_flags(&self.netlist, &descriptors, &patterns).map_err(value_err)?;
        Ok(100.0 - activation_rate(&flags))
    }

    /// Worst-case relative switching deviation of an infected netlist under
    /// the given patterns, in percent.
    fn sensitivity(&self, infected_bench: &str, patterns_text: &str) -> PyResult<f64> {
        let infected = parse_bench(infected_bench).map_err(value_err)?;
        let patterns = PatternFile::parse(patterns_text)
            .map_err(value_err)?
            .aligned_to(&self.netlist)
            .map_err(value_err)?;
        let s = side_channel_sensitivity(&self.netlist, &infected, &patterns)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(s.max_percent)
    }
}

/// Names of the built-in design profiles.
#[pyfunction]
fn profiles() -> Vec<String> {
    Profile::ALL.iter().map(|p| p.name().to_string()).collect()
}

/// Names of the implemented detection techniques.
#[pyfunction]
fn techniques() -> Vec<String> {
    Technique::ALL.iter().map(|t| t.name().to_string()).collect()
}

#[pymodule]
fn htlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetlist>()?;
    m.add_class::<PyWorkbench>()?;
    m.add_function(wrap_pyfunction!(profiles, m)?)?;
    m.add_function(wrap_pyfunction!(techniques, m)?)?;
    Ok(())
}
