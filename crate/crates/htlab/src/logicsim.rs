//! Bit-parallel logic simulation: 64 patterns per machine word per net,
//! signal probability estimation, rare-net extraction, and switching counts.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::netlist::{bit, GateKind, NetId, Netlist};

/// Patterns sampled per block while estimating signal probabilities.
const PROB_BLOCK: usize = 8192;

/// Largest input count accepted by exhaustive enumeration helpers.
pub const EXHAUSTIVE_INPUT_LIMIT: usize = 24;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("pattern set has {got} inputs, netlist expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("exhaustive enumeration limited to {EXHAUSTIVE_INPUT_LIMIT} inputs, got {got}")]
    TooManyInputs { got: usize },
}

#[derive(Debug, Error)]
pub enum PatternFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: expected {expected} bits, got {got}")]
    Width {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("pattern file names unknown input `{name}`")]
    UnknownInput { name: String },
    #[error("pattern file is missing input `{name}`")]
    MissingInput { name: String },
}

/// Test patterns packed bit-parallel: one row of words per input, pattern
/// `p` living at bit `p % 64` of word `p / 64`. Bits past `len()` are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternSet {
    num_inputs: usize,
    num_patterns: usize,
    rows: Vec<Vec<u64>>,
}

impl PatternSet {
    pub fn new(num_inputs: usize) -> PatternSet {
        PatternSet {
            num_inputs,
            num_patterns: 0,
            rows: vec![Vec::new(); num_inputs],
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn len(&self) -> usize {
        self.num_patterns
    }

    pub fn is_empty(&self) -> bool {
        self.num_patterns == 0
    }

    pub fn words_per_row(&self) -> usize {
        self.num_patterns.div_ceil(64)
    }

    pub fn row(&self, input: usize) -> &[u64] {
        &self.rows[input]
    }

    pub fn get(&self, pattern: usize, input: usize) -> bool {
        assert!(pattern < self.num_patterns);
        self.rows[input][pattern / 64] >> (pattern % 64) & 1 == 1
    }

    pub fn push(&mut self, bits: &[bool]) {
        assert_eq!(bits.len(), self.num_inputs, "pattern width mismatch");
        let word = self.num_patterns / 64;
        let shift = self.num_patterns % 64;
        for (row, &b) in self.rows.iter_mut().zip(bits) {
            if shift == 0 {
                row.push(0);
            }
            if b {
                row[word] |= 1u64 << shift;
            }
        }
        self.num_patterns += 1;
    }

    pub fn from_patterns(num_inputs: usize, patterns: &[Vec<bool>]) -> PatternSet {
        let mut set = PatternSet::new(num_inputs);
        for p in patterns {
            set.push(p);
        }
        set
    }

    pub fn pattern(&self, index: usize) -> Vec<bool> {
        (0..self.num_inputs).map(|i| self.get(index, i)).collect()
    }

    /// Uniform random patterns, deterministic in `(num_inputs, count, seed)`.
    pub fn random(num_inputs: usize, count: usize, seed: u64) -> PatternSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = count.div_ceil(64);
        let tail = tail_mask(count);
        let rows = (0..num_inputs)
            .map(|_| {
                let mut row: Vec<u64> = (0..words).map(|_| rng.random::<u64>()).collect();
                if let Some(last) = row.last_mut() {
                    *last &= tail;
                }
                row
            })
            .collect();
        PatternSet {
            num_inputs,
            num_patterns: count,
            rows,
        }
    }

    /// All `2^num_inputs` patterns; pattern `p` assigns bit `i` of `p` to
    /// input `i`.
    pub fn exhaustive(num_inputs: usize) -> PatternSet {
        assert!(
            num_inputs <= EXHAUSTIVE_INPUT_LIMIT,
            "exhaustive pattern set for {num_inputs} inputs"
        );
        let count = 1usize << num_inputs;
        let mut set = PatternSet::new(num_inputs);
        set.num_patterns = count;
        for (i, row) in set.rows.iter_mut().enumerate() {
            row.resize(count.div_ceil(64), 0);
            for p in 0..count {
                if p >> i & 1 == 1 {
                    row[p / 64] |= 1u64 << (p % 64);
                }
            }
        }
        set
    }

    /// New set containing `indices` in the given order; indices may repeat.
    pub fn select(&self, indices: &[usize]) -> PatternSet {
        let mut out = PatternSet::new(self.num_inputs);
        for &i in indices {
            out.push(&self.pattern(i));
        }
        out
    }

    pub fn extend_from(&mut self, other: &PatternSet) {
        assert_eq!(self.num_inputs, other.num_inputs, "input width mismatch");
        for p in 0..other.len() {
            self.push(&other.pattern(p));
        }
    }

    pub fn truncate(&mut self, len: usize) {
        if len >= self.num_patterns {
            return;
        }
        self.num_patterns = len;
        let words = len.div_ceil(64);
        let tail = tail_mask(len);
        for row in &mut self.rows {
            row.truncate(words);
            if let Some(last) = row.last_mut() {
                *last &= tail;
            }
        }
    }

    /// Drop exact duplicate patterns, keeping first occurrences in order.
    pub fn dedup(&self) -> PatternSet {
        let mut seen = std::collections::HashSet::new();
        let mut keep = Vec::new();
        for p in 0..self.len() {
            let key: Vec<u64> = self.pattern_words(p);
            if seen.insert(key) {
                keep.push(p);
            }
        }
        self.select(&keep)
    }

    /// Pattern `p` packed input-major into `num_inputs.div_ceil(64)` words.
    pub fn pattern_words(&self, pattern: usize) -> Vec<u64> {
        let mut words = vec![0u64; self.num_inputs.div_ceil(64)];
        for i in 0..self.num_inputs {
            if self.get(pattern, i) {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        words
    }

    /// Transposed copy: per-pattern packed input words, for Hamming-distance
    /// heavy consumers.
    pub fn pattern_major(&self) -> Vec<Vec<u64>> {
        (0..self.len()).map(|p| self.pattern_words(p)).collect()
    }

    /// Serialize: first line is the input names, then one '0'/'1' string per
    /// pattern.
    pub fn to_text(&self, names: &[String]) -> String {
        assert_eq!(names.len(), self.num_inputs);
        let mut out = names.join(" ");
        out.push('\n');
        for p in 0..self.len() {
            for i in 0..self.num_inputs {
                out.push(if self.get(p, i) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

fn tail_mask(count: usize) -> u64 {
    if count % 64 == 0 {
        u64::MAX
    } else {
        (1u64 << (count % 64)) - 1
    }
}

/// Pattern file contents: input names plus the patterns in file column order.
#[derive(Clone, Debug)]
pub struct PatternFile {
    pub names: Vec<String>,
    pub patterns: PatternSet,
}

impl PatternFile {
    pub fn parse(text: &str) -> Result<PatternFile, PatternFileError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| PatternFileError::Syntax {
            line: 1,
            msg: "empty file".to_string(),
        })?;
        let names: Vec<String> = header.split_whitespace().map(str::to_string).collect();
        if names.is_empty() {
            return Err(PatternFileError::Syntax {
                line: 1,
                msg: "missing input name header".to_string(),
            });
        }
        let mut patterns = PatternSet::new(names.len());
        for (lineno, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line.len() != names.len() {
                return Err(PatternFileError::Width {
                    line: lineno + 1,
                    expected: names.len(),
                    got: line.len(),
                });
            }
            let bits: Vec<bool> = line
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(PatternFileError::Syntax {
                        line: lineno + 1,
                        msg: format!("invalid bit `{other}`"),
                    }),
                })
                .collect::<Result<_, _>>()?;
            patterns.push(&bits);
        }
        Ok(PatternFile { names, patterns })
    }

    pub fn for_netlist(netlist: &Netlist, patterns: PatternSet) -> PatternFile {
        let names = netlist
            .primary_inputs()
            .iter()
            .map(|&pi| netlist.net_name(pi).to_string())
            .collect();
        PatternFile { names, patterns }
    }

    /// Reorder columns into the netlist's primary-input order.
    pub fn aligned_to(&self, netlist: &Netlist) -> Result<PatternSet, PatternFileError> {
        let pis = netlist.primary_inputs();
        let mut position = HashMap::new();
        for (col, name) in self.names.iter().enumerate() {
            let id = netlist
                .net_id(name)
                .filter(|&id| netlist.is_primary_input(id))
                .ok_or_else(|| PatternFileError::UnknownInput { name: name.clone() })?;
            position.insert(id, col);
        }
        let mut order = Vec::with_capacity(pis.len());
        for &pi in pis {
            let col = position
                .get(&pi)
                .ok_or_else(|| PatternFileError::MissingInput {
                    name: netlist.net_name(pi).to_string(),
                })?;
            order.push(*col);
        }
        let mut out = PatternSet::new(pis.len());
        out.num_patterns = self.patterns.len();
        out.rows = order
            .iter()
            .map(|&col| self.patterns.rows[col].clone())
            .collect();
        Ok(out)
    }
}

/// Per-net simulation values, same packing as [`PatternSet`].
#[derive(Clone, Debug)]
pub struct SimResult {
    num_nets: usize,
    num_patterns: usize,
    words_per_net: usize,
    values: Vec<u64>,
}

impl SimResult {
    pub fn num_patterns(&self) -> usize {
        self.num_patterns
    }

    pub fn row(&self, net: NetId) -> &[u64] {
        let start = net.index() * self.words_per_net;
        &self.values[start..start + self.words_per_net]
    }

    pub fn value(&self, net: NetId, pattern: usize) -> bool {
        assert!(pattern < self.num_patterns);
        self.row(net)[pattern / 64] >> (pattern % 64) & 1 == 1
    }

    pub fn ones(&self, net: NetId) -> u64 {
        self.row(net).iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Row of a net with polarity applied: pattern bit set iff the net sits
    /// at `value` under that pattern.
    pub fn at_value_row(&self, net: NetId, value: bool) -> Vec<u64> {
        let row = self.row(net);
        if value {
            row.to_vec()
        } else {
            let tail = tail_mask(self.num_patterns);
            let mut out: Vec<u64> = row.iter().map(|w| !w).collect();
            if let Some(last) = out.last_mut() {
                *last &= tail;
            }
            out
        }
    }

    /// Number of adjacent pattern pairs where the net changes value.
    pub fn toggles(&self, net: NetId) -> u64 {
        diff_words(self.row(net), self.num_patterns)
            .iter()
            .map(|w| w.count_ones() as u64)
            .sum()
    }
}

/// Word stream whose bit `i` is set iff the net differs between patterns
/// `i` and `i + 1`; `num_patterns - 1` valid bits.
fn diff_words(row: &[u64], num_patterns: usize) -> Vec<u64> {
    if num_patterns < 2 {
        return vec![0; row.len()];
    }
    let pairs = num_patterns - 1;
    let mut out = Vec::with_capacity(row.len());
    for w in 0..row.len() {
        let cur = row[w];
        let next_first = if w + 1 < row.len() { row[w + 1] & 1 } else { 0 };
        let shifted = (cur >> 1) | (next_first << 63);
        out.push(cur ^ shifted);
    }
    let last_word = pairs.div_ceil(64);
    out.truncate(last_word.max(1));
    if let Some(last) = out.last_mut() {
        *last &= tail_mask(pairs);
    }
    out
}

/// Evaluate the netlist over all patterns, 64 per word. O(gates * words).
pub fn simulate(netlist: &Netlist, patterns: &PatternSet) -> Result<SimResult, SimError> {
    let pis = netlist.primary_inputs();
    if patterns.num_inputs() != pis.len() {
        return Err(SimError::WidthMismatch {
            expected: pis.len(),
            got: patterns.num_inputs(),
        });
    }
    let wpn = patterns.words_per_row();
    let tail = tail_mask(patterns.len());
    let mut values = vec![0u64; netlist.num_nets() * wpn];
    for (i, &pi) in pis.iter().enumerate() {
        let start = pi.index() * wpn;
        values[start..start + wpn].copy_from_slice(patterns.row(i));
    }
    let mut scratch = vec![0u64; wpn];
    for gate in netlist.topo_gates() {
        let invert = matches!(
            gate.kind,
            GateKind::Nand | GateKind::Nor | GateKind::Xnor | GateKind::Not
        );
        {
            let first = gate.inputs[0].index() * wpn;
            scratch.copy_from_slice(&values[first..first + wpn]);
        }
        for &inp in &gate.inputs[1..] {
            let start = inp.index() * wpn;
            match gate.kind {
                GateKind::And | GateKind::Nand => {
                    for (s, v) in scratch.iter_mut().zip(&values[start..start + wpn]) {
                        *s &= v;
                    }
                }
                GateKind::Or | GateKind::Nor => {
                    for (s, v) in scratch.iter_mut().zip(&values[start..start + wpn]) {
                        *s |= v;
                    }
                }
                GateKind::Xor | GateKind::Xnor => {
                    for (s, v) in scratch.iter_mut().zip(&values[start..start + wpn]) {
                        *s ^= v;
                    }
                }
                GateKind::Not | GateKind::Buf => unreachable!("unary kinds have one input"),
            }
        }
        if invert {
            for s in scratch.iter_mut() {
                *s = !*s;
            }
            if let Some(last) = scratch.last_mut() {
                *last &= tail;
            }
        }
        let out = gate.output.index() * wpn;
        values[out..out + wpn].copy_from_slice(&scratch);
    }
    Ok(SimResult {
        num_nets: netlist.num_nets(),
        num_patterns: patterns.len(),
        words_per_net: wpn,
        values,
    })
}

/// Reference simulator: one pattern and one gate at a time, evaluated over
/// plain booleans. Exists as an independent oracle for differential tests.
pub fn simulate_naive(netlist: &Netlist, patterns: &PatternSet) -> Result<SimResult, SimError> {
    let pis = netlist.primary_inputs();
    if patterns.num_inputs() != pis.len() {
        return Err(SimError::WidthMismatch {
            expected: pis.len(),
            got: patterns.num_inputs(),
        });
    }
    let wpn = patterns.words_per_row();
    let mut values = vec![0u64; netlist.num_nets() * wpn];
    let mut net_vals = vec![false; netlist.num_nets()];
    for p in 0..patterns.len() {
        for (i, &pi) in pis.iter().enumerate() {
            net_vals[pi.index()] = patterns.get(p, i);
        }
        for gate in netlist.topo_gates() {
            let ins = gate.inputs.iter().map(|n| net_vals[n.index()]);
            let v = match gate.kind {
                GateKind::And => ins.fold(true, |a, b| a && b),
                GateKind::Nand => !gate.inputs.iter().all(|n| net_vals[n.index()]),
                GateKind::Or => ins.fold(false, |a, b| a || b),
                GateKind::Nor => !gate.inputs.iter().any(|n| net_vals[n.index()]),
                GateKind::Xor => ins.fold(false, |a, b| a ^ b),
                GateKind::Xnor => !gate.inputs.iter().fold(false, |a, n| a ^ net_vals[n.index()]),
                GateKind::Not => !net_vals[gate.inputs[0].index()],
                GateKind::Buf => net_vals[gate.inputs[0].index()],
            };
            net_vals[gate.output.index()] = v;
        }
        for (net, &v) in net_vals.iter().enumerate() {
            if v {
                values[net * wpn + p / 64] |= 1u64 << (p % 64);
            }
        }
    }
    Ok(SimResult {
        num_nets: netlist.num_nets(),
        num_patterns: patterns.len(),
        words_per_net: wpn,
        values,
    })
}

/// Estimated probability of each net being 1 under `n_random` uniform
/// patterns, sampled in fixed-size blocks.
pub fn signal_probabilities(netlist: &Netlist, n_random: usize, seed: u64) -> Vec<f64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut ones = vec![0u64; netlist.num_nets()];
    let mut remaining = n_random;
    while remaining > 0 {
        let block = remaining.min(PROB_BLOCK);
        let block_seed = master.random::<u64>();
        let patterns = PatternSet::random(netlist.primary_inputs().len(), block, block_seed);
        let sim = simulate(netlist, &patterns).expect("width matches by construction");
        for (net, slot) in ones.iter_mut().enumerate() {
            *slot += sim.ones(NetId::from_index(net));
        }
        remaining -= block;
    }
    ones.iter().map(|&c| c as f64 / n_random as f64).collect()
}

/// Exact probabilities by enumerating every input assignment.
pub fn signal_probabilities_exhaustive(netlist: &Netlist) -> Result<Vec<f64>, SimError> {
    let n = netlist.primary_inputs().len();
    if n > EXHAUSTIVE_INPUT_LIMIT {
        return Err(SimError::TooManyInputs { got: n });
    }
    let patterns = PatternSet::exhaustive(n);
    let sim = simulate(netlist, &patterns)?;
    let total = patterns.len() as f64;
    Ok((0..netlist.num_nets())
        .map(|i| sim.ones(NetId::from_index(i)) as f64 / total)
        .collect())
}

/// One rare net: it rarely sits at `rare_value`, with estimated probability
/// `prob` of doing so.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RareNet {
    pub net: NetId,
    pub rare_value: bool,
    pub prob: f64,
}

/// Rare nets in ascending net-id order, indexable both ways.
#[derive(Clone, Debug, Default)]
pub struct RareNetSet {
    items: Vec<RareNet>,
    position: HashMap<NetId, usize>,
}

impl RareNetSet {
    pub fn from_items(items: Vec<RareNet>) -> RareNetSet {
        debug_assert!(items.windows(2).all(|w| w[0].net < w[1].net));
        let position = items.iter().enumerate().map(|(i, r)| (r.net, i)).collect();
        RareNetSet { items, position }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> RareNet {
        self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RareNet> {
        self.items.iter()
    }

    pub fn position(&self, net: NetId) -> Option<usize> {
        self.position.get(&net).copied()
    }

    /// `(net, rare_value)` literals for the given rare indices.
    pub fn literals(&self, indices: &[usize]) -> Vec<(NetId, bool)> {
        indices
            .iter()
            .map(|&i| (self.items[i].net, self.items[i].rare_value))
            .collect()
    }

    pub fn prob_product(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.items[i].prob).product()
    }
}

/// Internal nets whose estimated probability of one polarity is below
/// `theta`. Primary inputs are excluded.
pub fn identify_rare_nets(netlist: &Netlist, probs: &[f64], theta: f64) -> RareNetSet {
    let mut items = Vec::new();
    for idx in 0..netlist.num_nets() {
        let net = NetId::from_index(idx);
        if netlist.is_primary_input(net) {
            continue;
        }
        let p1 = probs[idx];
        if p1 < theta {
            items.push(RareNet {
                net,
                rare_value: true,
                prob: p1,
            });
        } else if 1.0 - p1 < theta {
            items.push(RareNet {
                net,
                rare_value: false,
                prob: 1.0 - p1,
            });
        }
    }
    RareNetSet::from_items(items)
}

/// Serialize rare nets as `name rare_value prob` lines.
pub fn rare_nets_to_text(netlist: &Netlist, rares: &RareNetSet) -> String {
    let mut out = String::new();
    for r in rares.iter() {
        out.push_str(&format!(
            "{} {} {}\n",
            netlist.net_name(r.net),
            u8::from(r.rare_value),
            r.prob
        ));
    }
    out
}

#[derive(Debug, Error)]
pub enum RareFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("rare-net file names unknown net `{name}`")]
    UnknownNet { name: String },
}

pub fn parse_rare_net_file(text: &str, netlist: &Netlist) -> Result<RareNetSet, RareFileError> {
    let mut items = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, value, prob] = parts.as_slice() else {
            return Err(RareFileError::Syntax {
                line: lineno + 1,
                msg: format!("expected `name rare_value prob`, got `{line}`"),
            });
        };
        let net = netlist
            .net_id(name)
            .ok_or_else(|| RareFileError::UnknownNet {
                name: name.to_string(),
            })?;
        let rare_value = match *value {
            "0" => false,
            "1" => true,
            other => {
                return Err(RareFileError::Syntax {
                    line: lineno + 1,
                    msg: format!("rare_value must be 0 or 1, got `{other}`"),
                })
            }
        };
        let prob: f64 = prob.parse().map_err(|_| RareFileError::Syntax {
            line: lineno + 1,
            msg: format!("invalid probability `{prob}`"),
        })?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(RareFileError::Syntax {
                line: lineno + 1,
                msg: format!("probability {prob} outside [0, 1]"),
            });
        }
        items.push(RareNet {
            net,
            rare_value,
            prob,
        });
    }
    items.sort_by_key(|r| r.net);
    for w in items.windows(2) {
        if w[0].net == w[1].net {
            return Err(RareFileError::Syntax {
                line: 0,
                msg: format!("net `{}` listed twice", netlist.net_name(w[0].net)),
            });
        }
    }
    Ok(RareNetSet::from_items(items))
}

/// Per-adjacent-pair switching totals over the nets selected by `scope`
/// (a bitset over net ids; `None` counts every net). Entry `i` counts nets
/// that differ between patterns `i` and `i + 1`.
pub fn switching_counts(sim: &SimResult, scope: Option<&[u64]>) -> Vec<u64> {
    if sim.num_patterns < 2 {
        return Vec::new();
    }
    let pairs = sim.num_patterns - 1;
    let mut totals = vec![0u64; pairs];
    for net in 0..sim.num_nets {
        if let Some(mask) = scope {
            if !bit(mask, net) {
                continue;
            }
        }
        let diff = diff_words(sim.row(NetId::from_index(net)), sim.num_patterns);
        for (w, &word) in diff.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let tz = bits.trailing_zeros() as usize;
                totals[w * 64 + tz] += 1;
                bits &= bits - 1;
            }
        }
    }
    totals
}

/// Total toggle count over all adjacent pairs for nets in `scope`.
pub fn total_toggles(sim: &SimResult, scope: Option<&[u64]>) -> u64 {
    (0..sim.num_nets)
        .filter(|&net| scope.is_none_or(|mask| bit(mask, net)))
        .map(|net| sim.toggles(NetId::from_index(net)))
        .sum()
}
