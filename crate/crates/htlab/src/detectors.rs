//! Defender-side test pattern generation.
//!
//! Eight techniques produce pattern sets aimed at exposing rarely triggered
//! malicious logic: plain random patterns, rare-net N-detect mutation (MERO),
//! a GA+SAT hybrid, clique-based activation (TARMAC), switching-oriented
//! N-detect (MERS) with Hamming and simulation reorderings, and a
//! switching-sensitivity GA (MaxSense). All techniques are deterministic
//! given their configuration and emit at most `pattern_budget` patterns.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charact::{build_pair_table, PairTable};
use crate::logicsim::{
    simulate, switching_counts, PatternSet, RareNetSet, SimError, SimResult,
};
use crate::netlist::{bit, Netlist};
use crate::satcore::{CompatChecker, CompatQuery, CompatVerdict, Lit, SolveResult, Solver};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Random,
    Mero,
    GaSat,
    Tarmac,
    Mers,
    MersH,
    MersS,
    MaxSense,
}

impl Technique {
    pub const ALL: [Technique; 8] = [
        Technique::Random,
        Technique::Mero,
        Technique::GaSat,
        Technique::Tarmac,
        Technique::Mers,
        Technique::MersH,
        Technique::MersS,
        Technique::MaxSense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Random => "RANDOM",
            Technique::Mero => "MERO",
            Technique::GaSat => "GA_SAT",
            Technique::Tarmac => "TARMAC",
            Technique::Mers => "MERS",
            Technique::MersH => "MERS_H",
            Technique::MersS => "MERS_S",
            Technique::MaxSense => "MAXSENSE",
        }
    }

    /// Case-insensitive lookup; '-' and '_' are interchangeable.
    pub fn from_name(name: &str) -> Option<Technique> {
        let canon = name.to_ascii_uppercase().replace('-', "_");
        Technique::ALL.iter().copied().find(|t| t.name() == canon)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub technique: Technique,
    pub pattern_budget: usize,
    /// N-detect target: each rare net should be activated (MERO) or
    /// transitioned to rare (MERS) this many times.
    pub k: u32,
    pub population: usize,
    pub generations: usize,
    /// Subset size for GA+SAT coverage accounting.
    pub q: usize,
    /// Weight of the rare-transition term in the MERS reordering score.
    pub reorder_weight: f64,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(technique: Technique, seed: u64) -> DetectorConfig {
        DetectorConfig {
            technique,
            pattern_budget: 1000,
            k: 10,
            population: 100,
            generations: 200,
            q: 2,
            reorder_weight: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.pattern_budget == 0 {
            return Err(DetectorError::InvalidConfig(
                "pattern_budget must be positive".into(),
            ));
        }
        if self.k == 0 {
            return Err(DetectorError::InvalidConfig("k must be at least 1".into()));
        }
        let uses_ga = matches!(self.technique, Technique::GaSat | Technique::MaxSense);
        if uses_ga && self.population < 2 {
            return Err(DetectorError::InvalidConfig(
                "population must be at least 2".into(),
            ));
        }
        if self.technique == Technique::GaSat && self.q == 0 {
            return Err(DetectorError::InvalidConfig("q must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("reordering needs at least two patterns")]
    TooFewPatterns,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Per-run record written next to the emitted pattern file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorManifest {
    pub technique: String,
    pub config: DetectorConfig,
    pub num_patterns: usize,
    pub notes: Vec<String>,
}

/// Bitset over rare-net indices, one per pattern: bit r set iff rare net r
/// sits at its rare value under that pattern.
fn activation_masks(sim: &SimResult, rares: &RareNetSet) -> Vec<Vec<u64>> {
    let words = rares.len().div_ceil(64);
    let mut masks = vec![vec![0u64; words]; sim.num_patterns()];
    for (r, rare) in rares.iter().enumerate() {
        let row = sim.at_value_row(rare.net, rare.rare_value);
        for (p, mask) in masks.iter_mut().enumerate() {
            if bit(&row, p) {
                mask[r / 64] |= 1u64 << (r % 64);
            }
        }
    }
    masks
}

fn mask_ones(mask: &[u64]) -> u32 {
    mask.iter().map(|w| w.count_ones()).sum()
}

fn mask_indices(mask: &[u64]) -> Vec<u32> {
    let mut out = Vec::new();
    for (wi, &w) in mask.iter().enumerate() {
        let mut rest = w;
        while rest != 0 {
            let b = rest.trailing_zeros();
            out.push(wi as u32 * 64 + b);
            rest &= rest - 1;
        }
    }
    out
}

/// Number of rare nets that move from non-rare to rare across the pair.
pub fn transition_count(prev_mask: &[u64], next_mask: &[u64]) -> u32 {
    prev_mask
        .iter()
        .zip(next_mask)
        .map(|(&p, &n)| (n & !p).count_ones())
        .sum()
}

fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| (x ^ y).count_ones()).sum()
}

pub fn detect_random(netlist: &Netlist, budget: usize, seed: u64) -> PatternSet {
    PatternSet::random(netlist.primary_inputs().len(), budget, seed)
}

/// Chain state for the N-detect mutation skeleton: scores candidate
/// activation masks and absorbs accepted ones.
trait NdetectProgress {
    fn gain(&self, mask: &[u64]) -> u64;
    fn commit(&mut self, mask: &[u64]);
    fn saturated(&self) -> bool;
}

/// MERO progress: one unit per activated rare net still short of K.
struct ActivationProgress {
    counts: Vec<u64>,
    k: u64,
}

impl NdetectProgress for ActivationProgress {
    fn gain(&self, mask: &[u64]) -> u64 {
        mask_indices(mask)
            .iter()
            .filter(|&&r| self.counts[r as usize] < self.k)
            .count() as u64
    }

    fn commit(&mut self, mask: &[u64]) {
        for r in mask_indices(mask) {
            self.counts[r as usize] += 1;
        }
    }

    fn saturated(&self) -> bool {
        self.counts.iter().all(|&c| c >= self.k)
    }
}

/// MERS progress: one unit per non-rare-to-rare transition against the
/// previously emitted pattern. The chain starts from an implicit
/// all-non-rare state, so the first pattern scores its plain activations.
struct TransitionProgress {
    counts: Vec<u64>,
    k: u64,
    prev: Vec<u64>,
}

impl NdetectProgress for TransitionProgress {
    fn gain(&self, mask: &[u64]) -> u64 {
        mask_indices(mask)
            .iter()
            .filter(|&&r| !bit(&self.prev, r as usize) && self.counts[r as usize] < self.k)
            .count() as u64
    }

    fn commit(&mut self, mask: &[u64]) {
        for r in mask_indices(mask) {
            if !bit(&self.prev, r as usize) {
                self.counts[r as usize] += 1;
            }
        }
        self.prev.clear();
        self.prev.extend_from_slice(mask);
    }

    fn saturated(&self) -> bool {
        self.counts.iter().all(|&c| c >= self.k)
    }
}

/// Shared MERO/MERS skeleton: mutate random patterns one bit at a time,
/// keep strictly improving flips, and emit only contributing patterns.
fn mutate_and_collect<P: NdetectProgress>(
    netlist: &Netlist,
    rares: &RareNetSet,
    budget: usize,
    seed: u64,
    order_by_initial_activations: bool,
    progress: &mut P,
) -> Result<PatternSet, DetectorError> {
    let n = netlist.primary_inputs().len();
    let mut out = PatternSet::new(n);
    if budget == 0 || rares.is_empty() {
        return Ok(out);
    }
    let pool = PatternSet::random(n, budget, seed);
    let sim = simulate(netlist, &pool)?;
    let masks = activation_masks(&sim, rares);

    let mut order: Vec<usize> = (0..pool.len()).collect();
    if order_by_initial_activations {
        order.sort_by_key(|&p| std::cmp::Reverse(mask_ones(&masks[p])));
    }

    for &idx in &order {
        if progress.saturated() || out.len() >= budget {
            break;
        }
        let mut current = pool.pattern(idx);
        let mut cur_mask = masks[idx].clone();
        // Hill-climb over single-bit flips; each accepted flip strictly
        // increases the gain, so the loop terminates.
        loop {
            let mut variants = PatternSet::new(n);
            for flip in 0..n {
                let mut v = current.clone();
                v[flip] = !v[flip];
                variants.push(&v);
            }
            let vsim = simulate(netlist, &variants)?;
            let vmasks = activation_masks(&vsim, rares);
            let cur_gain = progress.gain(&cur_mask);
            let improving = (0..n).find(|&b| progress.gain(&vmasks[b]) > cur_gain);
            match improving {
                Some(b) => {
                    current[b] = !current[b];
                    cur_mask = vmasks[b].clone();
                }
                None => break,
            }
        }
        if progress.gain(&cur_mask) > 0 {
            progress.commit(&cur_mask);
            out.push(&current);
        }
    }
    Ok(out)
}

/// N-detect mutation: keep bit flips that push more rare nets toward K
/// activations; emit only patterns that contribute.
pub fn detect_mero(
    netlist: &Netlist,
    rares: &RareNetSet,
    k: u32,
    budget: usize,
    seed: u64,
) -> Result<PatternSet, DetectorError> {
    let mut progress = ActivationProgress {
        counts: vec![0; rares.len()],
        k: u64::from(k),
    };
    mutate_and_collect(netlist, rares, budget, seed, true, &mut progress)
}

/// MERS: like MERO, but progress counts non-rare-to-rare transitions across
/// consecutive emitted patterns.
pub fn detect_mers(
    netlist: &Netlist,
    rares: &RareNetSet,
    k: u32,
    budget: usize,
    seed: u64,
) -> Result<PatternSet, DetectorError> {
    let mut progress = TransitionProgress {
        counts: vec![0; rares.len()],
        k: u64::from(k),
        prev: vec![0; rares.len().div_ceil(64)],
    };
    mutate_and_collect(netlist, rares, budget, seed, false, &mut progress)
}

/// One GA generation with elitism: slot 0 of the result is the fittest
/// genome unchanged; the rest come from tournament selection, uniform
/// crossover, and per-bit mutation.
pub(crate) fn next_generation(
    rng: &mut ChaCha8Rng,
    population: &[Vec<bool>],
    fitness: &[f64],
    mutation_rate: f64,
) -> Vec<Vec<bool>> {
    let best = argmax(fitness);
    let mut next = Vec::with_capacity(population.len());
    next.push(population[best].clone());
    while next.len() < population.len() {
        let a = tournament(rng, fitness);
        let b = tournament(rng, fitness);
        let mut child = uniform_crossover(rng, &population[a], &population[b]);
        mutate(rng, &mut child, mutation_rate);
        next.push(child);
    }
    next
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn tournament(rng: &mut ChaCha8Rng, fitness: &[f64]) -> usize {
    let a = rng.random_range(0..fitness.len());
    let b = rng.random_range(0..fitness.len());
    if fitness[a] >= fitness[b] {
        a
    } else {
        b
    }
}

fn uniform_crossover(rng: &mut ChaCha8Rng, a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
        .collect()
}

fn mutate(rng: &mut ChaCha8Rng, genome: &mut [bool], rate: f64) {
    for g in genome.iter_mut() {
        if rng.random_bool(rate) {
            *g = !*g;
        }
    }
}

fn mutation_rate(num_bits: usize) -> f64 {
    (1.0 / num_bits.max(1) as f64).max(0.01)
}

/// Visit every q-subset of `items` in lexicographic order.
fn for_each_subset<F: FnMut(&[u32])>(items: &[u32], q: usize, f: &mut F) {
    fn rec<F: FnMut(&[u32])>(items: &[u32], q: usize, start: usize, acc: &mut Vec<u32>, f: &mut F) {
        if acc.len() == q {
            f(acc);
            return;
        }
        let needed = q - acc.len();
        for i in start..=items.len().saturating_sub(needed) {
            acc.push(items[i]);
            rec(items, q, i + 1, acc, f);
            acc.pop();
        }
    }
    if items.len() < q {
        return;
    }
    let mut acc = Vec::with_capacity(q);
    rec(items, q, 0, &mut acc, f);
}

fn count_new_subsets(mask: &[u64], q: usize, covered: &HashSet<Vec<u32>>) -> f64 {
    let items = mask_indices(mask);
    let mut count = 0u64;
    for_each_subset(&items, q, &mut |s| {
        if !covered.contains(s) {
            count += 1;
        }
    });
    count as f64
}

fn insert_subsets(mask: &[u64], q: usize, covered: &mut HashSet<Vec<u32>>) {
    let items = mask_indices(mask);
    for_each_subset(&items, q, &mut |s| {
        covered.insert(s.to_vec());
    });
}

/// GA phase evolves single patterns toward co-activating uncovered rare
/// q-subsets; SAT phase derives witness patterns for the compatible
/// q-subsets the GA missed.
pub fn detect_ga_sat(
    checker: &CompatChecker,
    rares: &RareNetSet,
    config: &DetectorConfig,
) -> Result<PatternSet, DetectorError> {
    config.validate()?;
    let netlist = checker.netlist().clone();
    let n = netlist.primary_inputs().len();
    let q = config.q;
    let budget = config.pattern_budget;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut covered: HashSet<Vec<u32>> = HashSet::new();
    let mut out = PatternSet::new(n);
    let rate = mutation_rate(n);

    let mut population: Vec<Vec<bool>> = (0..config.population)
        .map(|_| (0..n).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    for _ in 0..config.generations {
        if out.len() >= budget {
            break;
        }
        let mut batch = PatternSet::new(n);
        for genome in &population {
            batch.push(genome);
        }
        let sim = simulate(&netlist, &batch)?;
        let masks = activation_masks(&sim, rares);
        use rayon::prelude::*;
        let fitness: Vec<f64> = masks
            .par_iter()
            .map(|m| count_new_subsets(m, q, &covered))
            .collect();
        let best = argmax(&fitness);
        if fitness[best] > 0.0 {
            out.push(&population[best]);
            insert_subsets(&masks[best], q, &mut covered);
        }
        population = next_generation(&mut rng, &population, &fitness, rate);
    }

    // SAT phase: witness patterns for uncovered but satisfiable subsets.
    let all: Vec<u32> = (0..rares.len() as u32).collect();
    let mut stop = false;
    for_each_subset(&all, q, &mut |s| {
        if stop || covered.contains(s) {
            return;
        }
        if out.len() >= budget {
            stop = true;
            return;
        }
        let indices: Vec<usize> = s.iter().map(|&i| i as usize).collect();
        let query = match CompatQuery::new(rares.literals(&indices)) {
            Ok(q) => q,
            Err(_) => return,
        };
        if checker.check(&query) != CompatVerdict::Compatible {
            return;
        }
        if let Some(witness) = checker.witness(&query) {
            if let Ok(wsim) = simulate(&netlist, &witness) {
                let wmask = &activation_masks(&wsim, rares)[0];
                insert_subsets(wmask, q, &mut covered);
            }
            out.extend_from(&witness);
        }
    });

    let mut deduped = out.dedup();
    deduped.truncate(budget);
    Ok(deduped)
}

/// Clique-guided activation: sample maximal cliques of the pairwise
/// compatibility graph, shrink until jointly satisfiable, re-extend to a
/// maximal-under-SAT set, and emit one witness pattern per set.
pub fn detect_tarmac(
    checker: &CompatChecker,
    rares: &RareNetSet,
    table: &PairTable,
    budget: usize,
    seed: u64,
) -> PatternSet {
    let netlist = checker.netlist().clone();
    let num_inputs = netlist.primary_inputs().len();
    let n = rares.len();
    let words = table.words_per_row();
    let mut out = PatternSet::new(num_inputs);
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solver = checker.fresh_solver();
    let conflict_budget = checker.conflict_budget();
    let assumption = |i: usize| {
        let r = rares.get(i);
        Lit::new(r.net.index() as u32, r.rare_value)
    };
    let snapshot_rares = |solver: &Solver| -> Vec<bool> {
        (0..n)
            .map(|i| {
                let r = rares.get(i);
                solver.model_value(r.net.index() as u32) == r.rare_value
            })
            .collect()
    };
    let snapshot_pis = |solver: &Solver| -> Vec<u64> {
        let pis = netlist.primary_inputs();
        let mut bits = vec![0u64; pis.len().div_ceil(64)];
        for (i, &pi) in pis.iter().enumerate() {
            if solver.model_value(pi.index() as u32) {
                bits[i / 64] |= 1u64 << (i % 64);
            }
        }
        bits
    };
    let fresh_alive = || -> Vec<u64> {
        let mut alive = vec![!0u64; words];
        if n % 64 != 0 {
            alive[words - 1] = (1u64 << (n % 64)) - 1;
        }
        alive
    };
    let max_attempts = budget.saturating_mul(10).max(16);
    let mut attempts = 0;
    while out.len() < budget && attempts < max_attempts {
        attempts += 1;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        // Maximal pairwise clique along the random order; `alive` holds the
        // vertices pairwise-compatible with every member so far.
        let mut alive = fresh_alive();
        let mut members: Vec<usize> = Vec::new();
        for &v in &order {
            if alive[v / 64] >> (v % 64) & 1 == 1 && table.entry(v, v) {
                members.push(v);
                for (a, r) in alive.iter_mut().zip(table.row(v)) {
                    *a &= r;
                }
            }
        }
        if members.is_empty() {
            continue;
        }
        // Pairwise compatibility does not imply joint satisfiability;
        // shrink from the most recently added vertex until it does.
        let mut assumptions: Vec<Lit> = members.iter().map(|&i| assumption(i)).collect();
        let mut rare_model: Option<Vec<bool>> = None;
        let mut pi_bits: Vec<u64> = Vec::new();
        while !members.is_empty() {
            if solver.solve(&assumptions, conflict_budget) == SolveResult::Sat {
                rare_model = Some(snapshot_rares(&solver));
                pi_bits = snapshot_pis(&solver);
                break;
            }
            members.pop();
            assumptions.pop();
        }
        let Some(mut rare_model) = rare_model else {
            continue;
        };
        // Re-extend to maximal under SAT. Candidates must stay pairwise
        // compatible with every member; ones the current witness already
        // drives rare join for free, the rest cost one SAT call each.
        let mut alive = fresh_alive();
        let mut in_set = vec![false; n];
        for &m in &members {
            in_set[m] = true;
            for (a, r) in alive.iter_mut().zip(table.row(m)) {
                *a &= r;
            }
        }
        for &v in &order {
            if in_set[v] || alive[v / 64] >> (v % 64) & 1 == 0 || !table.entry(v, v) {
                continue;
            }
            let keep = if rare_model[v] {
                assumptions.push(assumption(v));
                true
            } else {
                assumptions.push(assumption(v));
                if solver.solve(&assumptions, conflict_budget) == SolveResult::Sat {
                    rare_model = snapshot_rares(&solver);
                    pi_bits = snapshot_pis(&solver);
                    true
                } else {
                    assumptions.pop();
                    false
                }
            };
            if keep {
                members.push(v);
                in_set[v] = true;
                for (a, r) in alive.iter_mut().zip(table.row(v)) {
                    *a &= r;
                }
            }
        }
        if seen.insert(pi_bits.clone()) {
            let bits: Vec<bool> = (0..num_inputs)
                .map(|i| pi_bits[i / 64] >> (i % 64) & 1 == 1)
                .collect();
            out.push(&bits);
        }
    }
    out
}

/// Hamming reordering: greedy chain where the next pattern maximizes
/// `w * predicted_rare_transitions - input_hamming_distance`. Transitions
/// are predicted from a single up-front simulation of the set.
pub fn reorder_mers_h(
    netlist: &Netlist,
    patterns: &PatternSet,
    rares: &RareNetSet,
    w: f64,
) -> Result<PatternSet, DetectorError> {
    if patterns.len() < 2 {
        return Err(DetectorError::TooFewPatterns);
    }
    let sim = simulate(netlist, patterns)?;
    let masks = activation_masks(&sim, rares);
    let inputs = patterns.pattern_major();
    let total = patterns.len();
    let mut used = vec![false; total];
    let mut order = vec![0usize];
    used[0] = true;
    for _ in 1..total {
        let prev = *order.last().expect("chain nonempty");
        let mut best: Option<(usize, f64)> = None;
        for cand in 0..total {
            if used[cand] {
                continue;
            }
            let score = w * f64::from(transition_count(&masks[prev], &masks[cand]))
                - f64::from(hamming(&inputs[prev], &inputs[cand]));
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((cand, score));
            }
        }
        let (cand, _) = best.expect("unused pattern remains");
        used[cand] = true;
        order.push(cand);
    }
    Ok(patterns.select(&order))
}

/// Simulated pair scores for one reordering step: for each candidate,
/// `w * rare_transitions - total_toggles` over the pair (prev, candidate),
/// both measured by golden simulation.
pub fn mers_s_scores(
    netlist: &Netlist,
    prev: &[bool],
    candidates: &[Vec<bool>],
    rares: &RareNetSet,
    w: f64,
) -> Result<Vec<f64>, DetectorError> {
    let n = prev.len();
    let mut batch = PatternSet::new(n);
    for cand in candidates {
        batch.push(prev);
        batch.push(cand);
    }
    let sim = simulate(netlist, &batch)?;
    let toggles = switching_counts(&sim, None);
    let masks = activation_masks(&sim, rares);
    Ok((0..candidates.len())
        .map(|j| {
            let trans = transition_count(&masks[2 * j], &masks[2 * j + 1]);
            w * f64::from(trans) - toggles[2 * j] as f64
        })
        .collect())
}

/// Simulation reordering: same greedy chain, but the score of each
/// candidate pair comes from actually simulating it.
pub fn reorder_mers_s(
    netlist: &Netlist,
    patterns: &PatternSet,
    rares: &RareNetSet,
    w: f64,
) -> Result<PatternSet, DetectorError> {
    if patterns.len() < 2 {
        return Err(DetectorError::TooFewPatterns);
    }
    let total = patterns.len();
    let pats: Vec<Vec<bool>> = (0..total).map(|i| patterns.pattern(i)).collect();
    let mut used = vec![false; total];
    let mut order = vec![0usize];
    used[0] = true;
    for _ in 1..total {
        let prev = &pats[*order.last().expect("chain nonempty")];
        let remaining: Vec<usize> = (0..total).filter(|&i| !used[i]).collect();
        let cands: Vec<Vec<bool>> = remaining.iter().map(|&i| pats[i].clone()).collect();
        let scores = mers_s_scores(netlist, prev, &cands, rares, w)?;
        let pick = remaining[argmax(&scores)];
        used[pick] = true;
        order.push(pick);
    }
    Ok(patterns.select(&order))
}

/// Union of the rare nets and their fan-in cones, as a net bitset.
pub fn rare_region(netlist: &Netlist, rares: &RareNetSet) -> Vec<u64> {
    let roots: Vec<_> = rares.iter().map(|r| r.net).collect();
    netlist.fanin_cone(&roots)
}

/// MaxSense pair fitness: toggles inside the rare region divided by
/// (1 + toggles elsewhere).
pub fn maxsense_fitness(
    netlist: &Netlist,
    region: &[u64],
    first: &[bool],
    second: &[bool],
) -> Result<f64, DetectorError> {
    let mut pair = PatternSet::new(first.len());
    pair.push(first);
    pair.push(second);
    let sim = simulate(netlist, &pair)?;
    let inside = switching_counts(&sim, Some(region))[0];
    let total = switching_counts(&sim, None)[0];
    Ok(inside as f64 / (1.0 + (total - inside) as f64))
}

/// MaxSense with the per-generation elite fitness trace exposed.
pub fn detect_maxsense_traced(
    netlist: &Netlist,
    rares: &RareNetSet,
    config: &DetectorConfig,
) -> Result<(PatternSet, Vec<f64>), DetectorError> {
    config.validate()?;
    let n = netlist.primary_inputs().len();
    let region = rare_region(netlist, rares);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rate = mutation_rate(2 * n);
    // A genome is a pattern pair: first n bits, then the next n.
    let mut population: Vec<Vec<bool>> = (0..config.population)
        .map(|_| (0..2 * n).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let mut trace = Vec::with_capacity(config.generations);
    let mut elites: Vec<Vec<bool>> = Vec::new();

    for _ in 0..config.generations {
        let mut batch = PatternSet::new(n);
        for genome in &population {
            batch.push(&genome[..n]);
            batch.push(&genome[n..]);
        }
        let sim = simulate(netlist, &batch)?;
        let inside = switching_counts(&sim, Some(&region));
        let total = switching_counts(&sim, None);
        let fitness: Vec<f64> = (0..population.len())
            .map(|i| {
                let r = inside[2 * i];
                let t = total[2 * i];
                r as f64 / (1.0 + (t - r) as f64)
            })
            .collect();
        let best = argmax(&fitness);
        trace.push(fitness[best]);
        if elites.last() != Some(&population[best]) {
            elites.push(population[best].clone());
        }

        let controlling = controlling_bits(netlist, &region, &population[best])?;
        let mut next = Vec::with_capacity(population.len());
        next.push(population[best].clone());
        while next.len() < population.len() {
            let a = tournament(&mut rng, &fitness);
            let b = tournament(&mut rng, &fitness);
            let (hi, lo) = if fitness[a] >= fitness[b] { (a, b) } else { (b, a) };
            let mut child: Vec<bool> = (0..2 * n)
                .map(|g| {
                    if controlling[g] {
                        population[hi][g]
                    } else if rng.random_bool(0.5) {
                        population[hi][g]
                    } else {
                        population[lo][g]
                    }
                })
                .collect();
            mutate(&mut rng, &mut child, rate);
            next.push(child);
        }
        population = next;
    }

    // Emit distinct elite pairs, most recent first, whole pairs only.
    let mut out = PatternSet::new(n);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    for genome in elites.iter().rev() {
        if out.len() + 2 > config.pattern_budget {
            break;
        }
        if seen.insert(genome.clone()) {
            out.push(&genome[..n]);
            out.push(&genome[n..]);
        }
    }
    Ok((out, trace))
}

/// Input-affinity probe: a genome bit is controlling when flipping it alone
/// changes the pair's rare-region toggle count.
fn controlling_bits(
    netlist: &Netlist,
    region: &[u64],
    genome: &[bool],
) -> Result<Vec<bool>, DetectorError> {
    let n = genome.len() / 2;
    let mut batch = PatternSet::new(n);
    batch.push(&genome[..n]);
    batch.push(&genome[n..]);
    for g in 0..2 * n {
        let mut flipped = genome.to_vec();
        flipped[g] = !flipped[g];
        batch.push(&flipped[..n]);
        batch.push(&flipped[n..]);
    }
    let sim = simulate(netlist, &batch)?;
    let inside = switching_counts(&sim, Some(region));
    let baseline = inside[0];
    Ok((0..2 * n).map(|g| inside[2 * (g + 1)] != baseline).collect())
}

/// GA over pattern pairs that rewards switching inside the rare region and
/// penalizes switching elsewhere.
pub fn detect_maxsense(
    netlist: &Netlist,
    rares: &RareNetSet,
    config: &DetectorConfig,
) -> Result<PatternSet, DetectorError> {
    detect_maxsense_traced(netlist, rares, config).map(|(p, _)| p)
}

/// The note attached to MaxSense outputs: its crossover operator is a
/// declared stand-in, not a published mechanism.
pub const MAXSENSE_AFFINITY_NOTE: &str =
    "input-affinity operator is a single-bit toggle probe stand-in";

pub struct DetectorOutcome {
    pub patterns: PatternSet,
    pub manifest: DetectorManifest,
}

/// Run one technique end to end. The pair table is built on demand when a
/// clique-based technique needs it and none is supplied.
pub fn run_detector(
    checker: &CompatChecker,
    rares: &RareNetSet,
    table: Option<&PairTable>,
    config: &DetectorConfig,
) -> Result<DetectorOutcome, DetectorError> {
    config.validate()?;
    let netlist = checker.netlist().clone();
    let budget = config.pattern_budget;
    let mut notes = Vec::new();
    let patterns = match config.technique {
        Technique::Random => detect_random(&netlist, budget, config.seed),
        Technique::Mero => detect_mero(&netlist, rares, config.k, budget, config.seed)?,
        Technique::GaSat => detect_ga_sat(checker, rares, config)?,
        Technique::Tarmac => {
            let built;
            let table = match table {
                Some(t) => t,
                None => {
                    built = build_pair_table(checker, rares);
                    &built
                }
            };
            detect_tarmac(checker, rares, table, budget, config.seed)
        }
        Technique::Mers => detect_mers(&netlist, rares, config.k, budget, config.seed)?,
        Technique::MersH | Technique::MersS => {
            let base = detect_mers(&netlist, rares, config.k, budget, config.seed)?;
            if base.len() < 2 {
                base
            } else if config.technique == Technique::MersH {
                reorder_mers_h(&netlist, &base, rares, config.reorder_weight)?
            } else {
                reorder_mers_s(&netlist, &base, rares, config.reorder_weight)?
            }
        }
        Technique::MaxSense => {
            notes.push(MAXSENSE_AFFINITY_NOTE.to_string());
            detect_maxsense(&netlist, rares, config)?
        }
    };
    debug_assert!(patterns.len() <= budget);
    let manifest = DetectorManifest {
        technique: config.technique.name().to_string(),
        config: config.clone(),
        num_patterns: patterns.len(),
        notes,
    };
    Ok(DetectorOutcome { patterns, manifest })
}
