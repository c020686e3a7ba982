//! SAT layer: Tseitin encoding of netlists, a CDCL solver, and a memoized
//! checker for "can these rare literals hold simultaneously" queries.

mod solver;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use dashmap::DashMap;
use thiserror::Error;

use crate::logicsim::PatternSet;
use crate::netlist::{GateKind, NetId, Netlist};

pub use solver::{SolveResult, Solver};

/// Default per-query conflict budget before a query degrades to Unknown.
pub const DEFAULT_CONFLICT_BUDGET: u64 = 1_000_000;

/// Literal over CNF variables; variable 0 is the first net.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Lit(u32);

impl Lit {
    pub fn new(var: u32, positive: bool) -> Lit {
        Lit(var << 1 | u32::from(!positive))
    }

    pub fn var(self) -> u32 {
        self.0 >> 1
    }

    pub fn is_positive(self) -> bool {
        self.0 & 1 == 0
    }

    pub fn negated(self) -> Lit {
        Lit(self.0 ^ 1)
    }

    pub(crate) fn code(self) -> usize {
        self.0 as usize
    }

    pub fn to_dimacs(self) -> i64 {
        let v = i64::from(self.var()) + 1;
        if self.is_positive() {
            v
        } else {
            -v
        }
    }
}

/// Literal asserting that `net` carries `value`.
pub fn net_lit(net: NetId, value: bool) -> Lit {
    Lit::new(net.index() as u32, value)
}

/// Plain clause database. Clauses are normalized on insert: literals sorted
/// and deduplicated, tautologies dropped.
#[derive(Clone, Debug, Default)]
pub struct CnfFormula {
    pub num_vars: usize,
    pub clauses: Vec<Vec<Lit>>,
}

impl CnfFormula {
    pub fn new(num_vars: usize) -> CnfFormula {
        CnfFormula {
            num_vars,
            clauses: Vec::new(),
        }
    }

    pub fn new_var(&mut self) -> u32 {
        let v = self.num_vars as u32;
        self.num_vars += 1;
        v
    }

    pub fn add_clause(&mut self, mut lits: Vec<Lit>) {
        lits.sort_unstable_by_key(|l| l.0);
        lits.dedup();
        if lits.windows(2).any(|w| w[0].var() == w[1].var()) {
            return;
        }
        self.clauses.push(lits);
    }

    /// DIMACS text, with `assumptions` appended as unit clauses. When a
    /// netlist is supplied, variable-to-net-name comments are emitted.
    pub fn to_dimacs(&self, assumptions: &[Lit], netlist: Option<&Netlist>) -> String {
        let mut out = String::new();
        if let Some(n) = netlist {
            for idx in 0..n.num_nets() {
                out.push_str(&format!(
                    "c var {} = net {}\n",
                    idx + 1,
                    n.net_name(NetId::from_index(idx))
                ));
            }
        }
        out.push_str(&format!(
            "p cnf {} {}\n",
            self.num_vars,
            self.clauses.len() + assumptions.len()
        ));
        for clause in &self.clauses {
            for lit in clause {
                out.push_str(&format!("{} ", lit.to_dimacs()));
            }
            out.push_str("0\n");
        }
        for a in assumptions {
            out.push_str(&format!("{} 0\n", a.to_dimacs()));
        }
        out
    }
}

/// Tseitin-encode the netlist: variable `i` is net `i`; auxiliary variables
/// beyond `num_nets` carry wide-XOR chain intermediates.
pub fn encode_netlist(netlist: &Netlist) -> CnfFormula {
    let mut cnf = CnfFormula::new(netlist.num_nets());
    for gate in netlist.gates() {
        let out = Lit::new(gate.output.index() as u32, true);
        let ins: Vec<Lit> = gate
            .inputs
            .iter()
            .map(|n| Lit::new(n.index() as u32, true))
            .collect();
        match gate.kind {
            GateKind::And => and_clauses(&mut cnf, out, &ins),
            GateKind::Nand => and_clauses(&mut cnf, out.negated(), &ins),
            GateKind::Or => or_clauses(&mut cnf, out, &ins),
            GateKind::Nor => or_clauses(&mut cnf, out.negated(), &ins),
            GateKind::Buf => buf_clauses(&mut cnf, out, ins[0]),
            GateKind::Not => buf_clauses(&mut cnf, out, ins[0].negated()),
            GateKind::Xor => xor_chain(&mut cnf, out, &ins),
            GateKind::Xnor => xor_chain(&mut cnf, out.negated(), &ins),
        }
    }
    cnf
}

/// out <-> AND(ins): n+1 clauses.
fn and_clauses(cnf: &mut CnfFormula, out: Lit, ins: &[Lit]) {
    if ins.len() == 1 {
        buf_clauses(cnf, out, ins[0]);
        return;
    }
    let mut big = Vec::with_capacity(ins.len() + 1);
    big.push(out);
    for &i in ins {
        cnf.add_clause(vec![out.negated(), i]);
        big.push(i.negated());
    }
    cnf.add_clause(big);
}

/// out <-> OR(ins): n+1 clauses.
fn or_clauses(cnf: &mut CnfFormula, out: Lit, ins: &[Lit]) {
    and_clauses(cnf, out.negated(), &ins.iter().map(|l| l.negated()).collect::<Vec<_>>());
}

fn buf_clauses(cnf: &mut CnfFormula, out: Lit, a: Lit) {
    cnf.add_clause(vec![out.negated(), a]);
    cnf.add_clause(vec![out, a.negated()]);
}

/// c <-> a XOR b: 4 clauses.
fn xor2_clauses(cnf: &mut CnfFormula, c: Lit, a: Lit, b: Lit) {
    cnf.add_clause(vec![c.negated(), a, b]);
    cnf.add_clause(vec![c.negated(), a.negated(), b.negated()]);
    cnf.add_clause(vec![c, a.negated(), b]);
    cnf.add_clause(vec![c, a, b.negated()]);
}

/// out <-> XOR(ins) via a chain of fresh intermediates.
fn xor_chain(cnf: &mut CnfFormula, out: Lit, ins: &[Lit]) {
    match ins.len() {
        1 => buf_clauses(cnf, out, ins[0]),
        2 => xor2_clauses(cnf, out, ins[0], ins[1]),
        _ => {
            let mut acc = ins[0];
            for &next in &ins[1..ins.len() - 1] {
                let t = Lit::new(cnf.new_var(), true);
                xor2_clauses(cnf, t, acc, next);
                acc = t;
            }
            xor2_clauses(cnf, out, acc, ins[ins.len() - 1]);
        }
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("compatibility query is empty")]
    Empty,
    #[error("net appears twice in a compatibility query")]
    DuplicateNet,
}

/// Set of `(net, value)` literals whose joint satisfiability is in question.
/// Nets are distinct and sorted, so equal sets share one cache entry.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct CompatQuery {
    literals: Vec<(NetId, bool)>,
}

impl CompatQuery {
    pub fn new(mut literals: Vec<(NetId, bool)>) -> Result<CompatQuery, QueryError> {
        if literals.is_empty() {
            return Err(QueryError::Empty);
        }
        literals.sort_unstable_by_key(|&(n, _)| n);
        if literals.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(QueryError::DuplicateNet);
        }
        Ok(CompatQuery { literals })
    }

    pub fn literals(&self) -> &[(NetId, bool)] {
        &self.literals
    }

    fn key(&self) -> Vec<(u32, bool)> {
        self.literals
            .iter()
            .map(|&(n, v)| (n.index() as u32, v))
            .collect()
    }

    pub fn assumptions(&self) -> Vec<Lit> {
        self.literals.iter().map(|&(n, v)| net_lit(n, v)).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CompatVerdict {
    Compatible,
    Incompatible,
    /// Budget ran out; callers treat this as incompatible and count it.
    Unknown,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckerStats {
    pub queries: u64,
    pub cache_hits: u64,
    pub sat_calls: u64,
    pub unknowns: u64,
    pub seeded: u64,
}

#[derive(Default)]
struct AtomicStats {
    queries: AtomicU64,
    cache_hits: AtomicU64,
    sat_calls: AtomicU64,
    unknowns: AtomicU64,
    seeded: AtomicU64,
}

/// Memoized satisfiability oracle for rare-literal sets over one netlist.
///
/// Verdicts are cached by sorted literal set. A serial solver guards the
/// plain `check` path; parallel callers create per-worker solvers with
/// [`CompatChecker::fresh_solver`] and share the same cache through
/// [`CompatChecker::check_with_solver`].
pub struct CompatChecker {
    netlist: Arc<Netlist>,
    cnf: Arc<CnfFormula>,
    cache: DashMap<Vec<(u32, bool)>, CompatVerdict>,
    witnesses: DashMap<Vec<(u32, bool)>, Vec<u64>>,
    solver: Mutex<Solver>,
    budget: u64,
    stats: AtomicStats,
}

impl CompatChecker {
    pub fn new(netlist: Arc<Netlist>, budget: u64) -> CompatChecker {
        let cnf = Arc::new(encode_netlist(&netlist));
        let solver = Mutex::new(Solver::new(&cnf));
        CompatChecker {
            netlist,
            cnf,
            cache: DashMap::new(),
            witnesses: DashMap::new(),
            solver,
            budget,
            stats: AtomicStats::default(),
        }
    }

    pub fn netlist(&self) -> &Arc<Netlist> {
        &self.netlist
    }

    pub fn cnf(&self) -> &CnfFormula {
        &self.cnf
    }

    pub fn fresh_solver(&self) -> Solver {
        Solver::new(&self.cnf)
    }

    pub fn conflict_budget(&self) -> u64 {
        self.budget
    }

    pub fn check(&self, query: &CompatQuery) -> CompatVerdict {
        self.stats.queries.fetch_add(1, Ordering::Relaxed);
        let key = query.key();
        if let Some(v) = self.cache.get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return *v;
        }
        let mut solver = self.solver.lock().expect("solver lock");
        self.solve_and_record(&mut solver, query, key)
    }

    /// Same as [`check`](Self::check) but on a caller-owned solver, for
    /// parallel workers. The shared cache is still consulted and filled.
    pub fn check_with_solver(&self, solver: &mut Solver, query: &CompatQuery) -> CompatVerdict {
        self.stats.queries.fetch_add(1, Ordering::Relaxed);
        let key = query.key();
        if let Some(v) = self.cache.get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return *v;
        }
        self.solve_and_record(solver, query, key)
    }

    fn solve_and_record(
        &self,
        solver: &mut Solver,
        query: &CompatQuery,
        key: Vec<(u32, bool)>,
    ) -> CompatVerdict {
        self.stats.sat_calls.fetch_add(1, Ordering::Relaxed);
        let verdict = match solver.solve(&query.assumptions(), self.budget) {
            SolveResult::Sat => {
                self.witnesses.insert(key.clone(), self.model_pis(solver));
                CompatVerdict::Compatible
            }
            SolveResult::Unsat => CompatVerdict::Incompatible,
            SolveResult::Unknown => {
                self.stats.unknowns.fetch_add(1, Ordering::Relaxed);
                CompatVerdict::Unknown
            }
        };
        self.cache.insert(key, verdict);
        verdict
    }

    fn model_pis(&self, solver: &Solver) -> Vec<u64> {
        let pis = self.netlist.primary_inputs();
        let mut words = vec![0u64; pis.len().div_ceil(64)];
        for (i, &pi) in pis.iter().enumerate() {
            if solver.model_value(pi.index() as u32) {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        words
    }

    /// A single input pattern driving every query literal to its value, or
    /// None when the query is not compatible. Solves if no witness is cached
    /// yet, which covers verdicts seeded without a pattern.
    pub fn witness(&self, query: &CompatQuery) -> Option<PatternSet> {
        let key = query.key();
        if !self.witnesses.contains_key(&key) {
            let mut solver = self.solver.lock().expect("solver lock");
            self.stats.sat_calls.fetch_add(1, Ordering::Relaxed);
            match solver.solve(&query.assumptions(), self.budget) {
                SolveResult::Sat => {
                    self.witnesses.insert(key.clone(), self.model_pis(&solver));
                    self.cache.insert(key.clone(), CompatVerdict::Compatible);
                }
                _ => return None,
            }
        }
        let words = self.witnesses.get(&key)?;
        let n = self.netlist.primary_inputs().len();
        let bits: Vec<bool> = (0..n).map(|i| words[i / 64] >> (i % 64) & 1 == 1).collect();
        Some(PatternSet::from_patterns(n, &[bits]))
    }

    /// Record a compatibility verdict observed outside the solver, e.g. a
    /// simulation pattern that drove all literals to their rare values.
    pub fn seed_compatible(&self, query: &CompatQuery, witness_pi_words: Vec<u64>) {
        let key = query.key();
        if self
            .cache
            .insert(key.clone(), CompatVerdict::Compatible)
            .is_none()
        {
            self.stats.seeded.fetch_add(1, Ordering::Relaxed);
        }
        self.witnesses.entry(key).or_insert(witness_pi_words);
    }

    pub fn stats(&self) -> CheckerStats {
        CheckerStats {
            queries: self.stats.queries.load(Ordering::Relaxed),
            cache_hits: self.stats.cache_hits.load(Ordering::Relaxed),
            sat_calls: self.stats.sat_calls.load(Ordering::Relaxed),
            unknowns: self.stats.unknowns.load(Ordering::Relaxed),
            seeded: self.stats.seeded.load(Ordering::Relaxed),
        }
    }
}
