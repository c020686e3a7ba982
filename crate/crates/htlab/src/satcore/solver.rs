//! CDCL SAT solver: two-literal watching, first-UIP learning, VSIDS-style
//! branching with phase saving, Luby restarts, and assumption-based
//! incremental solving under a per-call conflict budget.

use super::{CnfFormula, Lit};

const NO_REASON: u32 = u32::MAX;
const RESTART_BASE: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveResult {
    Sat,
    Unsat,
    /// Conflict budget exhausted before a verdict.
    Unknown,
}

struct Clause {
    lits: Vec<Lit>,
    learned: bool,
    deleted: bool,
}

#[derive(Clone, Copy)]
struct Watcher {
    clause: u32,
    /// Some other literal of the clause; if true the clause is satisfied
    /// and need not be inspected.
    blocker: Lit,
}

/// Max-heap of variables ordered by activity, with lazy membership.
#[derive(Default)]
struct VarOrder {
    heap: Vec<u32>,
    pos: Vec<i32>,
}

impl VarOrder {
    fn new(n: usize) -> VarOrder {
        // All activities start equal, so any order is a valid heap.
        VarOrder {
            heap: (0..n as u32).collect(),
            pos: (0..n as i32).collect(),
        }
    }

    fn in_heap(&self, v: u32) -> bool {
        self.pos[v as usize] >= 0
    }

    fn push(&mut self, v: u32, activity: &[f64]) {
        if self.in_heap(v) {
            return;
        }
        self.pos[v as usize] = self.heap.len() as i32;
        self.heap.push(v);
        self.sift_up(self.heap.len() - 1, activity);
    }

    fn pop_max(&mut self, activity: &[f64]) -> Option<u32> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().expect("nonempty");
        self.pos[top as usize] = -1;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last as usize] = 0;
            self.sift_down(0, activity);
        }
        Some(top)
    }

    fn bumped(&mut self, v: u32, activity: &[f64]) {
        if self.in_heap(v) {
            self.sift_up(self.pos[v as usize] as usize, activity);
        }
    }

    fn sift_up(&mut self, mut i: usize, activity: &[f64]) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if activity[self.heap[i] as usize] <= activity[self.heap[parent] as usize] {
                break;
            }
            self.swap(i, parent);
            i = parent;
        }
    }

    fn sift_down(&mut self, mut i: usize, activity: &[f64]) {
        loop {
            let l = 2 * i + 1;
            let r = 2 * i + 2;
            let mut best = i;
            if l < self.heap.len()
                && activity[self.heap[l] as usize] > activity[self.heap[best] as usize]
            {
                best = l;
            }
            if r < self.heap.len()
                && activity[self.heap[r] as usize] > activity[self.heap[best] as usize]
            {
                best = r;
            }
            if best == i {
                break;
            }
            self.swap(i, best);
            i = best;
        }
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        self.pos[self.heap[a] as usize] = a as i32;
        self.pos[self.heap[b] as usize] = b as i32;
    }
}

pub struct Solver {
    clauses: Vec<Clause>,
    watches: Vec<Vec<Watcher>>,
    /// -1 unassigned, 0 false, 1 true, indexed by variable.
    assign: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<u32>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    queue_head: usize,
    activity: Vec<f64>,
    order: VarOrder,
    phase: Vec<bool>,
    var_inc: f64,
    seen: Vec<bool>,
    unsat_at_root: bool,
    live_learned: usize,
    learned_cap: usize,
    total_conflicts: u64,
}

impl Solver {
    pub fn new(cnf: &CnfFormula) -> Solver {
        let n = cnf.num_vars;
        let mut solver = Solver {
            clauses: Vec::with_capacity(cnf.clauses.len()),
            watches: vec![Vec::new(); 2 * n],
            assign: vec![-1; n],
            level: vec![0; n],
            reason: vec![NO_REASON; n],
            trail: Vec::with_capacity(n),
            trail_lim: Vec::new(),
            queue_head: 0,
            activity: vec![0.0; n],
            order: VarOrder::new(n),
            phase: vec![false; n],
            var_inc: 1.0,
            seen: vec![false; n],
            unsat_at_root: false,
            live_learned: 0,
            learned_cap: 8192,
            total_conflicts: 0,
        };
        for clause in &cnf.clauses {
            solver.add_clause(clause.clone(), false);
            if solver.unsat_at_root {
                break;
            }
        }
        if !solver.unsat_at_root && solver.propagate().is_some() {
            solver.unsat_at_root = true;
        }
        solver
    }

    pub fn total_conflicts(&self) -> u64 {
        self.total_conflicts
    }

    fn value(&self, lit: Lit) -> Option<bool> {
        match self.assign[lit.var() as usize] {
            -1 => None,
            v => Some((v == 1) == lit.is_positive()),
        }
    }

    /// Polarity of `var` in the model; call only after `solve` returned Sat.
    pub fn model_value(&self, var: u32) -> bool {
        debug_assert!(self.assign[var as usize] >= 0, "model incomplete");
        self.assign[var as usize] == 1
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn add_clause(&mut self, lits: Vec<Lit>, learned: bool) -> u32 {
        debug_assert!(self.decision_level() == 0 || learned);
        if lits.is_empty() {
            self.unsat_at_root = true;
            return NO_REASON;
        }
        if lits.len() == 1 {
            // Unit clause: assign at the root. Learned units reach here only
            // after backtracking to level 0.
            match self.value(lits[0]) {
                Some(false) => self.unsat_at_root = true,
                Some(true) => {}
                None => self.enqueue(lits[0], NO_REASON),
            }
            return NO_REASON;
        }
        let idx = self.clauses.len() as u32;
        self.watches[lits[0].code()].push(Watcher {
            clause: idx,
            blocker: lits[1],
        });
        self.watches[lits[1].code()].push(Watcher {
            clause: idx,
            blocker: lits[0],
        });
        self.clauses.push(Clause {
            lits,
            learned,
            deleted: false,
        });
        if learned {
            self.live_learned += 1;
        }
        idx
    }

    fn enqueue(&mut self, lit: Lit, reason: u32) {
        debug_assert!(self.value(lit).is_none());
        let v = lit.var() as usize;
        self.assign[v] = i8::from(lit.is_positive());
        self.level[v] = self.decision_level() as u32;
        self.reason[v] = reason;
        self.trail.push(lit);
    }

    fn propagate(&mut self) -> Option<u32> {
        while self.queue_head < self.trail.len() {
            let p = self.trail[self.queue_head];
            self.queue_head += 1;
            let false_lit = p.negated();
            let mut list = std::mem::take(&mut self.watches[false_lit.code()]);
            let mut i = 0;
            let mut conflict = None;
            'clauses: while i < list.len() {
                let w = list[i];
                if self.value(w.blocker) == Some(true) {
                    i += 1;
                    continue;
                }
                let cid = w.clause as usize;
                if self.clauses[cid].deleted {
                    list.swap_remove(i);
                    continue;
                }
                if self.clauses[cid].lits[0] == false_lit {
                    self.clauses[cid].lits.swap(0, 1);
                }
                debug_assert_eq!(self.clauses[cid].lits[1], false_lit);
                let first = self.clauses[cid].lits[0];
                if self.value(first) == Some(true) {
                    list[i].blocker = first;
                    i += 1;
                    continue;
                }
                for k in 2..self.clauses[cid].lits.len() {
                    if self.value(self.clauses[cid].lits[k]) != Some(false) {
                        self.clauses[cid].lits.swap(1, k);
                        let moved = self.clauses[cid].lits[1];
                        self.watches[moved.code()].push(Watcher {
                            clause: w.clause,
                            blocker: first,
                        });
                        list.swap_remove(i);
                        continue 'clauses;
                    }
                }
                if self.value(first) == Some(false) {
                    conflict = Some(w.clause);
                    break;
                }
                self.enqueue(first, w.clause);
                i += 1;
            }
            self.watches[false_lit.code()] = list;
            if conflict.is_some() {
                self.queue_head = self.trail.len();
                return conflict;
            }
        }
        None
    }

    fn bump(&mut self, var: u32) {
        self.activity[var as usize] += self.var_inc;
        if self.activity[var as usize] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.order.bumped(var, &self.activity);
    }

    /// First-UIP conflict analysis. Returns the learned clause (asserting
    /// literal first) and the backtrack level.
    fn analyze(&mut self, mut conflict: u32) -> (Vec<Lit>, usize) {
        let current = self.decision_level() as u32;
        let mut learned: Vec<Lit> = vec![Lit::new(0, true)];
        let mut counter = 0usize;
        let mut p: Option<Lit> = None;
        let mut ti = self.trail.len();
        loop {
            let start = usize::from(p.is_some());
            for idx in start..self.clauses[conflict as usize].lits.len() {
                let q = self.clauses[conflict as usize].lits[idx];
                let v = q.var();
                if !self.seen[v as usize] && self.level[v as usize] > 0 {
                    self.seen[v as usize] = true;
                    self.bump(v);
                    if self.level[v as usize] == current {
                        counter += 1;
                    } else {
                        learned.push(q);
                    }
                }
            }
            loop {
                ti -= 1;
                if self.seen[self.trail[ti].var() as usize] {
                    break;
                }
            }
            let pl = self.trail[ti];
            self.seen[pl.var() as usize] = false;
            counter -= 1;
            if counter == 0 {
                learned[0] = pl.negated();
                break;
            }
            p = Some(pl);
            conflict = self.reason[pl.var() as usize];
            debug_assert_ne!(conflict, NO_REASON);
        }
        for q in &learned[1..] {
            self.seen[q.var() as usize] = false;
        }
        let mut bt = 0usize;
        if learned.len() > 1 {
            let mut max_i = 1;
            for i in 2..learned.len() {
                if self.level[learned[i].var() as usize] > self.level[learned[max_i].var() as usize]
                {
                    max_i = i;
                }
            }
            learned.swap(1, max_i);
            bt = self.level[learned[1].var() as usize] as usize;
        }
        (learned, bt)
    }

    fn backtrack(&mut self, target: usize) {
        while self.decision_level() > target {
            let until = self.trail_lim.pop().expect("level exists");
            while self.trail.len() > until {
                let lit = self.trail.pop().expect("trail entry");
                let v = lit.var() as usize;
                self.phase[v] = lit.is_positive();
                self.assign[v] = -1;
                self.reason[v] = NO_REASON;
                self.order.push(lit.var(), &self.activity);
            }
        }
        self.queue_head = self.trail.len();
    }

    /// Drop the oldest half of learned clauses that are not the reason of a
    /// current assignment. Called at restarts, so only root assignments can
    /// lock clauses.
    fn reduce_learned(&mut self) {
        let locked: std::collections::HashSet<u32> = self
            .trail
            .iter()
            .map(|l| self.reason[l.var() as usize])
            .filter(|&r| r != NO_REASON)
            .collect();
        let mut seen_live = 0;
        let keep_from = self.live_learned / 2;
        for (idx, clause) in self.clauses.iter_mut().enumerate() {
            if !clause.learned || clause.deleted {
                continue;
            }
            if seen_live < keep_from && !locked.contains(&(idx as u32)) {
                clause.deleted = true;
                clause.lits = Vec::new();
                self.live_learned -= 1;
            }
            seen_live += 1;
        }
        self.learned_cap = self.learned_cap * 3 / 2;
    }

    /// Decide satisfiability under `assumptions`, spending at most `budget`
    /// conflicts. The solver keeps learned clauses across calls; they are
    /// implied by the base formula alone, so reuse is sound.
    pub fn solve(&mut self, assumptions: &[Lit], budget: u64) -> SolveResult {
        if self.unsat_at_root {
            return SolveResult::Unsat;
        }
        self.backtrack(0);
        let mut conflicts: u64 = 0;
        let mut restart_round: u64 = 0;
        let mut next_restart = luby(0) * RESTART_BASE;
        loop {
            if let Some(conflict) = self.propagate() {
                self.total_conflicts += 1;
                conflicts += 1;
                if self.decision_level() == 0 {
                    self.unsat_at_root = true;
                    return SolveResult::Unsat;
                }
                if conflicts > budget {
                    self.backtrack(0);
                    return SolveResult::Unknown;
                }
                let (learned, bt) = self.analyze(conflict);
                self.backtrack(bt);
                let assert_lit = learned[0];
                if learned.len() == 1 {
                    match self.value(assert_lit) {
                        Some(false) => {
                            self.unsat_at_root = true;
                            return SolveResult::Unsat;
                        }
                        Some(true) => {}
                        None => self.enqueue(assert_lit, NO_REASON),
                    }
                } else {
                    let idx = self.add_clause(learned, true);
                    self.enqueue(assert_lit, idx);
                }
                self.var_inc /= 0.95;
                if conflicts >= next_restart {
                    restart_round += 1;
                    next_restart = conflicts + luby(restart_round) * RESTART_BASE;
                    self.backtrack(0);
                    if self.live_learned > self.learned_cap {
                        self.reduce_learned();
                    }
                }
            } else if self.decision_level() < assumptions.len() {
                let a = assumptions[self.decision_level()];
                match self.value(a) {
                    Some(true) => self.trail_lim.push(self.trail.len()),
                    Some(false) => {
                        self.backtrack(0);
                        return SolveResult::Unsat;
                    }
                    None => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(a, NO_REASON);
                    }
                }
            } else {
                let mut next = None;
                while let Some(v) = self.order.pop_max(&self.activity) {
                    if self.assign[v as usize] == -1 {
                        next = Some(v);
                        break;
                    }
                }
                match next {
                    Some(v) => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(Lit::new(v, self.phase[v as usize]), NO_REASON);
                    }
                    None => return SolveResult::Sat,
                }
            }
        }
    }
}

/// Luby restart sequence (0-indexed): 1 1 2 1 1 2 4 ...
fn luby(mut x: u64) -> u64 {
    let mut size = 1u64;
    let mut seq = 0u32;
    while size < x + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != x {
        size = (size - 1) >> 1;
        seq -= 1;
        x %= size;
    }
    1u64 << seq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clause(lits: &[i64]) -> Vec<Lit> {
        lits.iter()
            .map(|&l| Lit::new((l.unsigned_abs() - 1) as u32, l > 0))
            .collect()
    }

    fn formula(num_vars: usize, clauses: &[&[i64]]) -> CnfFormula {
        let mut cnf = CnfFormula::new(num_vars);
        for c in clauses {
            cnf.add_clause(clause(c));
        }
        cnf
    }

    #[test]
    fn trivial_sat_and_unsat() {
        let sat = formula(2, &[&[1, 2], &[-1, 2]]);
        assert_eq!(Solver::new(&sat).solve(&[], u64::MAX), SolveResult::Sat);
        let unsat = formula(1, &[&[1], &[-1]]);
        assert_eq!(Solver::new(&unsat).solve(&[], u64::MAX), SolveResult::Unsat);
    }

    #[test]
    fn model_satisfies_formula() {
        let clauses: Vec<Vec<i64>> = vec![
            vec![1, 2, -3],
            vec![-1, 3],
            vec![-2, -3, 4],
            vec![2, 3, -4],
            vec![1, -4],
        ];
        let refs: Vec<&[i64]> = clauses.iter().map(|c| c.as_slice()).collect();
        let cnf = formula(4, &refs);
        let mut solver = Solver::new(&cnf);
        assert_eq!(solver.solve(&[], u64::MAX), SolveResult::Sat);
        for c in &clauses {
            assert!(
                c.iter().any(|&l| {
                    solver.model_value((l.unsigned_abs() - 1) as u32) == (l > 0)
                }),
                "clause {c:?} unsatisfied"
            );
        }
    }

    #[test]
    fn matches_brute_force_on_random_3cnf() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let nv = rng.random_range(3..9usize);
            let nc = rng.random_range(3..30usize);
            let mut cnf = CnfFormula::new(nv);
            let mut raw = Vec::new();
            for _ in 0..nc {
                let c: Vec<Lit> = (0..3)
                    .map(|_| Lit::new(rng.random_range(0..nv as u32), rng.random_bool(0.5)))
                    .collect();
                raw.push(c.clone());
                cnf.add_clause(c);
            }
            let brute = (0..1u32 << nv).any(|m| {
                raw.iter().all(|c| {
                    c.iter()
                        .any(|l| (m >> l.var() & 1 == 1) == l.is_positive())
                })
            });
            let got = Solver::new(&cnf).solve(&[], u64::MAX);
            assert_eq!(got == SolveResult::Sat, brute, "vars={nv} clauses={raw:?}");
        }
    }

    #[test]
    fn assumptions_restrict_and_release() {
        // (a or b) with assumption not-a forces b.
        let cnf = formula(2, &[&[1, 2]]);
        let mut solver = Solver::new(&cnf);
        assert_eq!(
            solver.solve(&[Lit::new(0, false)], u64::MAX),
            SolveResult::Sat
        );
        assert!(solver.model_value(1));
        // Contradictory assumptions are Unsat, but the solver recovers.
        assert_eq!(
            solver.solve(&[Lit::new(0, false), Lit::new(1, false)], u64::MAX),
            SolveResult::Unsat
        );
        assert_eq!(solver.solve(&[], u64::MAX), SolveResult::Sat);
    }

    #[test]
    fn unsat_under_assumptions_only() {
        // Pigeonhole 2 into 1 is unsat outright; here use xor-ish chain:
        // (a=b) and (b=c) with assumptions a, not-c.
        let cnf = formula(3, &[&[-1, 2], &[1, -2], &[-2, 3], &[2, -3]]);
        let mut solver = Solver::new(&cnf);
        assert_eq!(solver.solve(&[], u64::MAX), SolveResult::Sat);
        assert_eq!(
            solver.solve(&[Lit::new(0, true), Lit::new(2, false)], u64::MAX),
            SolveResult::Unsat
        );
        assert_eq!(solver.solve(&[], u64::MAX), SolveResult::Sat);
    }

    #[test]
    fn luby_sequence_prefix() {
        let got: Vec<u64> = (0..15).map(luby).collect();
        assert_eq!(got, [1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8]);
    }
}
