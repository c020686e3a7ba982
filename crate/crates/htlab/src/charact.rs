//! Offline characterization: pairwise compatibility table over rare nets,
//! repeated randomized greedy construction of maximal compatible sets, and
//! the per-net likelihood statistics the RL reward consults in O(T).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::logicsim::{PatternSet, RareNetSet, SimResult};
use crate::satcore::{CompatChecker, CompatQuery, CompatVerdict, Solver};

/// Pairs handled per worker while filling the pair table.
const PAIR_CHUNK: usize = 2048;

/// Symmetric compatibility matrix over rare-net indices, one bitset row per
/// net. `entry(i, i)` records whether the single literal is satisfiable at
/// all; UNSAT singles have an all-false row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairTable {
    n: usize,
    words: usize,
    rows: Vec<u64>,
}

impl PairTable {
    fn new(n: usize) -> PairTable {
        let words = n.div_ceil(64);
        PairTable {
            n,
            words,
            rows: vec![0u64; n * words],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.rows[i * self.words..(i + 1) * self.words]
    }

    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.row(i)[j / 64] >> (j % 64) & 1 == 1
    }

    fn set(&mut self, i: usize, j: usize) {
        self.rows[i * self.words + j / 64] |= 1u64 << (j % 64);
        self.rows[j * self.words + i / 64] |= 1u64 << (i % 64);
    }

    /// True iff `row(candidate)` covers every member bit of `set`.
    pub fn covers(&self, candidate: usize, set: &[u64]) -> bool {
        self.row(candidate)
            .iter()
            .zip(set)
            .all(|(r, s)| s & !r == 0)
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }
}

/// Record simulation-observed co-activations into the checker cache so the
/// pair table can skip those SAT calls. For every rare single and pair seen
/// at rare value under some pattern, the pattern itself is the witness.
pub fn seed_pairs_from_simulation(
    checker: &CompatChecker,
    rares: &RareNetSet,
    patterns: &PatternSet,
    sim: &SimResult,
) {
    let n = rares.len();
    let rows: Vec<Vec<u64>> = rares
        .iter()
        .map(|r| sim.at_value_row(r.net, r.rare_value))
        .collect();
    for i in 0..n {
        let hit_i = rows[i].iter().any(|&w| w != 0);
        if !hit_i {
            continue;
        }
        let pi_words = |pattern: usize| -> Vec<u64> {
            let bits = patterns.pattern(pattern);
            let mut words = vec![0u64; bits.len().div_ceil(64)];
            for (k, &b) in bits.iter().enumerate() {
                if b {
                    words[k / 64] |= 1u64 << (k % 64);
                }
            }
            words
        };
        let first = first_set_bit(&rows[i]).expect("nonzero row");
        let ri = rares.get(i);
        if let Ok(q) = CompatQuery::new(vec![(ri.net, ri.rare_value)]) {
            checker.seed_compatible(&q, pi_words(first));
        }
        for j in i + 1..n {
            let both = rows[i]
                .iter()
                .zip(&rows[j])
                .position(|(a, b)| a & b != 0)
                .map(|w| {
                    let bits = rows[i][w] & rows[j][w];
                    w * 64 + bits.trailing_zeros() as usize
                });
            if let Some(p) = both {
                let rj = rares.get(j);
                let q = CompatQuery::new(vec![(ri.net, ri.rare_value), (rj.net, rj.rare_value)])
                    .expect("distinct rare nets");
                checker.seed_compatible(&q, pi_words(p));
            }
        }
    }
}

fn first_set_bit(words: &[u64]) -> Option<usize> {
    words
        .iter()
        .position(|&w| w != 0)
        .map(|w| w * 64 + words[w].trailing_zeros() as usize)
}

/// Check every single and every unordered pair of rare literals, in parallel
/// chunks that share the checker's verdict cache. Unknown verdicts count as
/// incompatible.
pub fn build_pair_table(checker: &CompatChecker, rares: &RareNetSet) -> PairTable {
    let n = rares.len();
    let mut table = PairTable::new(n);
    let singles: Vec<bool> = (0..n)
        .into_par_iter()
        .chunks(PAIR_CHUNK)
        .map(|chunk| {
            let mut solver = checker.fresh_solver();
            chunk
                .into_iter()
                .map(|i| {
                    let r = rares.get(i);
                    let q = CompatQuery::new(vec![(r.net, r.rare_value)]).expect("single literal");
                    checker.check_with_solver(&mut solver, &q) == CompatVerdict::Compatible
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();

    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    let verdicts: Vec<bool> = pairs
        .par_chunks(PAIR_CHUNK)
        .map(|chunk| {
            let mut solver: Option<Solver> = None;
            chunk
                .iter()
                .map(|&(i, j)| {
                    if !singles[i] || !singles[j] {
                        return false;
                    }
                    let (ri, rj) = (rares.get(i), rares.get(j));
                    let q =
                        CompatQuery::new(vec![(ri.net, ri.rare_value), (rj.net, rj.rare_value)])
                            .expect("distinct rare nets");
                    let solver = solver.get_or_insert_with(|| checker.fresh_solver());
                    checker.check_with_solver(solver, &q) == CompatVerdict::Compatible
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();

    for (i, &solo) in singles.iter().enumerate() {
        if solo {
            table.set(i, i);
        }
    }
    for (&(i, j), &ok) in pairs.iter().zip(&verdicts) {
        if ok {
            table.set(i, j);
        }
    }
    table
}

/// Product of T randomized greedy passes: the compatible sets themselves,
/// plus per-net membership counts (likelihood) and a transposed membership
/// index for O(T) subset-coverage queries.
#[derive(Clone, Debug)]
pub struct CharacterizationData {
    pair_table: PairTable,
    /// `sets[i]` is C_i as a bitset over rare indices.
    sets: Vec<Vec<u64>>,
    /// `membership[r]` is a bitset over iterations containing rare net r.
    membership: Vec<Vec<u64>>,
    likelihood: Vec<u32>,
    seed: u64,
    exact: bool,
}

impl CharacterizationData {
    pub fn pair_table(&self) -> &PairTable {
        &self.pair_table
    }

    pub fn sets(&self) -> &[Vec<u64>] {
        &self.sets
    }

    pub fn iterations(&self) -> usize {
        self.sets.len()
    }

    pub fn likelihood(&self) -> &[u32] {
        &self.likelihood
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn exact(&self) -> bool {
        self.exact
    }

    pub fn set_members(&self, i: usize) -> Vec<usize> {
        bitset_members(&self.sets[i])
    }

    pub fn average_set_size(&self) -> f64 {
        if self.sets.is_empty() {
            return 0.0;
        }
        let total: u64 = self
            .sets
            .iter()
            .map(|s| s.iter().map(|w| u64::from(w.count_ones())).sum::<u64>())
            .sum();
        total as f64 / self.sets.len() as f64
    }

    /// True iff some characterized set contains every given rare index.
    /// Costs O(|indices| * T / 64) regardless of design size.
    pub fn covered(&self, indices: &[usize]) -> bool {
        let words = self.iterations().div_ceil(64);
        if indices.is_empty() {
            return true;
        }
        let mut acc = self.membership[indices[0]].clone();
        for &r in &indices[1..] {
            for (a, m) in acc.iter_mut().zip(&self.membership[r]) {
                *a &= m;
            }
        }
        debug_assert_eq!(acc.len(), words);
        acc.iter().any(|&w| w != 0)
    }

    /// The `b` rare indices with the lowest likelihood, ties broken by
    /// lower index.
    pub fn select_branches(&self, b: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.likelihood.len()).collect();
        order.sort_by_key(|&i| (self.likelihood[i], i));
        order.truncate(b);
        order
    }

    pub fn to_file(&self, key: CharacterizationKey) -> CharacterizationFile {
        CharacterizationFile {
            key,
            rare_count: self.pair_table.len(),
            pair_rows: self.pair_table.rows.clone(),
            sets: self.sets.clone(),
        }
    }

    pub fn from_file(file: &CharacterizationFile) -> CharacterizationData {
        let n = file.rare_count;
        let pair_table = PairTable {
            n,
            words: n.div_ceil(64),
            rows: file.pair_rows.clone(),
        };
        let (membership, likelihood) = index_sets(n, &file.sets);
        CharacterizationData {
            pair_table,
            sets: file.sets.clone(),
            membership,
            likelihood,
            seed: file.key.seed,
            exact: file.key.exact,
        }
    }
}

fn bitset_members(words: &[u64]) -> Vec<usize> {
    let mut out = Vec::new();
    for (w, &word) in words.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            out.push(w * 64 + bits.trailing_zeros() as usize);
            bits &= bits - 1;
        }
    }
    out
}

fn index_sets(n: usize, sets: &[Vec<u64>]) -> (Vec<Vec<u64>>, Vec<u32>) {
    let t_words = sets.len().div_ceil(64);
    let mut membership = vec![vec![0u64; t_words]; n];
    let mut likelihood = vec![0u32; n];
    for (i, set) in sets.iter().enumerate() {
        for r in bitset_members(set) {
            membership[r][i / 64] |= 1u64 << (i % 64);
            likelihood[r] += 1;
        }
    }
    (membership, likelihood)
}

fn mix(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `t_iterations` randomized greedy passes. Each pass visits the rare
/// nets in a fresh random permutation and adds a net to the growing set iff
/// it is pairwise compatible with every member (plus a full-set SAT check
/// when `exact`). Every produced set is maximal under that test.
///
/// Deterministic in `(pair_table, seed, t_iterations, exact)`: each pass
/// derives its own RNG, so parallel scheduling cannot reorder draws.
pub fn characterize(
    checker: &CompatChecker,
    rares: &RareNetSet,
    pair_table: PairTable,
    t_iterations: usize,
    seed: u64,
    exact: bool,
) -> CharacterizationData {
    let n = pair_table.len();
    let build = |i: usize| -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.shuffle(&mut rng);
        let mut set = vec![0u64; n.div_ceil(64)];
        let mut members: Vec<usize> = Vec::new();
        for &r in &perm {
            let r = r as usize;
            if !pair_table.entry(r, r) || !pair_table.covers(r, &set) {
                continue;
            }
            if exact && !members.is_empty() {
                let mut indices = members.clone();
                indices.push(r);
                let q = CompatQuery::new(rares.literals(&indices)).expect("distinct nets");
                if checker.check(&q) != CompatVerdict::Compatible {
                    continue;
                }
            }
            set[r / 64] |= 1u64 << (r % 64);
            members.push(r);
        }
        set
    };
    // Exact mode funnels through the shared serial solver anyway, so run it
    // sequentially; the pairwise-only mode is embarrassingly parallel.
    let sets: Vec<Vec<u64>> = if exact {
        (0..t_iterations).map(build).collect()
    } else {
        (0..t_iterations).into_par_iter().map(build).collect()
    };
    let (membership, likelihood) = index_sets(n, &sets);
    CharacterizationData {
        pair_table,
        sets,
        membership,
        likelihood,
        seed,
        exact,
    }
}

/// Cache identity for one characterization artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationKey {
    pub netlist_sha256: String,
    pub rare_sha256: String,
    pub theta: f64,
    pub t_iterations: usize,
    pub seed: u64,
    pub exact: bool,
}

/// On-disk form: key plus raw sets; membership and likelihood are derived
/// on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharacterizationFile {
    pub key: CharacterizationKey,
    pub rare_count: usize,
    pub pair_rows: Vec<u64>,
    pub sets: Vec<Vec<u64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logicsim::{
        identify_rare_nets, signal_probabilities_exhaustive, simulate, RareNet,
    };
    use crate::netlist::{parse_bench, Netlist};
    use crate::satcore::DEFAULT_CONFLICT_BUDGET;
    use std::sync::Arc;

    fn setup(text: &str, theta: f64) -> (Arc<Netlist>, RareNetSet, CompatChecker) {
        let netlist = Arc::new(parse_bench(text).unwrap());
        let probs = signal_probabilities_exhaustive(&netlist).unwrap();
        let rares = identify_rare_nets(&netlist, &probs, theta);
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        (netlist, rares, checker)
    }

    /// Three rare nets: deep AND (a) plus two complementary branches, so b
    /// and c are mutually incompatible and each compatible with a.
    const FORKED: &str = "INPUT(i1)\nINPUT(i2)\nINPUT(i3)\nINPUT(i4)\nINPUT(i5)\nOUTPUT(o)\n\
         a = AND(i1, i2, i3, i4)\n\
         ni5 = NOT(i5)\n\
         b = AND(i1, i2, i3, i5)\n\
         c = AND(i1, i2, i3, ni5)\n\
         o = OR(a, b, c)\n";

    #[test]
    fn pair_table_matches_exhaustive_compatibility() {
        let (netlist, rares, checker) = setup(FORKED, 0.1);
        assert_eq!(rares.len(), 3);
        let table = build_pair_table(&checker, &rares);
        let patterns = PatternSet::exhaustive(5);
        let sim = simulate(&netlist, &patterns).unwrap();
        for i in 0..rares.len() {
            for j in i..rares.len() {
                let (ri, rj) = (rares.get(i), rares.get(j));
                let want = (0..patterns.len()).any(|p| {
                    sim.value(ri.net, p) == ri.rare_value && sim.value(rj.net, p) == rj.rare_value
                });
                assert_eq!(table.entry(i, j), want, "pair ({i}, {j})");
                assert_eq!(table.entry(j, i), want, "symmetry ({j}, {i})");
            }
        }
    }

    #[test]
    fn pair_table_issues_exactly_singles_plus_pairs_queries() {
        let (_netlist, rares, checker) = setup(FORKED, 0.1);
        let n = rares.len() as u64;
        build_pair_table(&checker, &rares);
        assert_eq!(checker.stats().queries, n + n * (n - 1) / 2);
    }

    #[test]
    fn characterized_sets_are_maximal_and_respect_conflicts() {
        let (_netlist, rares, checker) = setup(FORKED, 0.1);
        let table = build_pair_table(&checker, &rares);
        let t = 200;
        let data = characterize(&checker, &rares, table, t, 7, false);
        let a = rares
            .position(checker.netlist().net_id("a").unwrap())
            .unwrap();
        let b = rares
            .position(checker.netlist().net_id("b").unwrap())
            .unwrap();
        let c = rares
            .position(checker.netlist().net_id("c").unwrap())
            .unwrap();
        for i in 0..t {
            let members = data.set_members(i);
            // Maximality: a joins every set; exactly one of the conflicting
            // pair joins.
            assert!(members.contains(&a), "set {i} missing always-compatible net");
            assert_eq!(
                members.contains(&b) as u8 + members.contains(&c) as u8,
                1,
                "set {i} must contain exactly one of the conflicting pair"
            );
        }
        assert_eq!(data.likelihood()[a] as usize, t);
        let (lb, lc) = (data.likelihood()[b], data.likelihood()[c]);
        assert_eq!((lb + lc) as usize, t);
        // Which branch wins is a fair coin per iteration; allow 4 sigma.
        let sigma = (t as f64 / 4.0).sqrt();
        assert!((f64::from(lb) - t as f64 / 2.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn covered_distinguishes_subsets_of_sets_from_conflicting_sets() {
        let (_netlist, rares, checker) = setup(FORKED, 0.1);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 50, 3, false);
        let pos = |name: &str| {
            rares
                .position(checker.netlist().net_id(name).unwrap())
                .unwrap()
        };
        let (a, b, c) = (pos("a"), pos("b"), pos("c"));
        assert!(data.covered(&[a]));
        assert!(data.covered(&[a, b]) || data.covered(&[a, c]));
        assert!(!data.covered(&[b, c]), "conflicting pair cannot be covered");
        assert!(!data.covered(&[a, b, c]));
        assert!(data.covered(&[]));
    }

    #[test]
    fn characterization_is_deterministic_per_seed() {
        let (_netlist, rares, checker) = setup(FORKED, 0.1);
        let table = build_pair_table(&checker, &rares);
        let d1 = characterize(&checker, &rares, table.clone(), 64, 11, false);
        let d2 = characterize(&checker, &rares, table.clone(), 64, 11, false);
        assert_eq!(d1.sets(), d2.sets());
        let d3 = characterize(&checker, &rares, table, 64, 12, false);
        assert_ne!(d1.sets(), d3.sets(), "different seed should reshuffle");
    }

    /// Pairwise-compatible triple that is jointly unsatisfiable: the three
    /// XORs x=a^b, y=b^c, z=a^c always sum to 0, so all-ones is impossible.
    #[test]
    fn exact_mode_rejects_jointly_unsat_triples() {
        let text = "INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(o)\n\
                    x = XOR(a, b)\ny = XOR(b, c)\nz = XOR(a, c)\no = AND(x, y, z)\n";
        let netlist = Arc::new(parse_bench(text).unwrap());
        let rares = RareNetSet::from_items(
            ["x", "y", "z"]
                .iter()
                .map(|n| RareNet {
                    net: netlist.net_id(n).unwrap(),
                    rare_value: true,
                    prob: 0.5,
                })
                .collect(),
        );
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        let table = build_pair_table(&checker, &rares);
        for i in 0..3 {
            for j in 0..3 {
                assert!(table.entry(i, j), "all pairs are compatible");
            }
        }
        let loose = characterize(&checker, &rares, table.clone(), 20, 5, false);
        assert!(
            (0..20).all(|i| loose.set_members(i).len() == 3),
            "pairwise-only mode cannot see the joint conflict"
        );
        let strict = characterize(&checker, &rares, table, 20, 5, true);
        assert!(
            (0..20).all(|i| strict.set_members(i).len() == 2),
            "exact mode must stop at two members"
        );
        assert!(!strict.covered(&[0, 1, 2]));
    }

    #[test]
    fn select_branches_orders_by_likelihood_then_index() {
        let (_netlist, rares, checker) = setup(FORKED, 0.1);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 101, 13, false);
        let picks = data.select_branches(2);
        // The always-member net has likelihood T; the forked pair splits T.
        let a = rares
            .position(checker.netlist().net_id("a").unwrap())
            .unwrap();
        assert_eq!(picks.len(), 2);
        assert!(!picks.contains(&a));
        let all = data.select_branches(10);
        assert_eq!(all.len(), 3, "b clamps to rare count");
        assert_eq!(*all.last().unwrap(), a);
    }

    #[test]
    fn file_round_trip_preserves_sets_and_derives_indices() {
        let (_netlist, rares, checker) = setup(FORKED, 0.1);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 33, 17, false);
        let key = CharacterizationKey {
            netlist_sha256: "abc".into(),
            rare_sha256: "def".into(),
            theta: 0.1,
            t_iterations: 33,
            seed: 17,
            exact: false,
        };
        let file = data.to_file(key.clone());
        let json = serde_json::to_string(&file).unwrap();
        let back: CharacterizationFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.key, key);
        let restored = CharacterizationData::from_file(&back);
        assert_eq!(restored.sets(), data.sets());
        assert_eq!(restored.likelihood(), data.likelihood());
        assert_eq!(restored.pair_table(), data.pair_table());
    }

    #[test]
    fn simulation_seeding_skips_solver_calls_for_observed_pairs() {
        let (netlist, rares, checker) = setup(FORKED, 0.1);
        let patterns = PatternSet::exhaustive(5);
        let sim = simulate(&netlist, &patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &patterns, &sim);
        let seeded = checker.stats().seeded;
        assert!(seeded > 0);
        let table = build_pair_table(&checker, &rares);
        // Exhaustive patterns witness every compatible single and pair, so
        // the only SAT work left is refuting the incompatible pair.
        assert_eq!(checker.stats().sat_calls, 1);
        let b = rares
            .position(netlist.net_id("b").unwrap())
            .unwrap();
        let c = rares
            .position(netlist.net_id("c").unwrap())
            .unwrap();
        assert!(!table.entry(b, c));
    }
}
