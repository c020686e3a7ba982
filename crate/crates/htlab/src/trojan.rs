//! Hardware Trojan construction: AND-tree triggers over rare literals, XOR
//! payload insertion under a fan-in cone constraint, miter-based validity
//! checking, and the non-RL trigger generators (random, trimmed random,
//! pattern-evading).

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charact::CharacterizationData;
use crate::logicsim::{simulate, PatternSet, RareNetSet};
use crate::netlist::{bit, GateKind, NetId, Netlist, NetlistError};
use crate::satcore::{encode_netlist, net_lit, CompatChecker, CompatQuery, CompatVerdict, QueryError, SolveResult, Solver};

#[derive(Debug, Error)]
pub enum TrojanError {
    #[error("payload target `{net}` lies in the trigger fan-in cone")]
    TargetInTriggerCone { net: String },
    #[error("payload target `{net}` has no path to a primary output")]
    TargetNotObservable { net: String },
    #[error("payload target `{net}` is a primary input")]
    TargetIsPrimaryInput { net: String },
    #[error("no legal payload target exists for this trigger")]
    NoLegalTarget,
    #[error("trigger literals are not jointly satisfiable")]
    TriggerIncompatible,
    #[error("draw budget of {budget} exhausted after {found} candidate(s)")]
    BudgetExhausted { budget: u64, found: usize },
    #[error("need at least {width} rare nets, have {available}")]
    NotEnoughRareNets { width: usize, available: usize },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// How a trigger was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Rl,
    Random,
    MinusRl,
    Evade,
}

/// A set of rare literals intended to fire together.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerCandidate {
    /// Sorted by net id, nets distinct.
    pub literals: Vec<(NetId, bool)>,
    /// Product of the literals' estimated rare probabilities.
    pub prob_product: f64,
}

impl TriggerCandidate {
    pub fn from_rare_indices(rares: &RareNetSet, indices: &[usize]) -> TriggerCandidate {
        let mut indices = indices.to_vec();
        indices.sort_unstable();
        TriggerCandidate {
            literals: rares.literals(&indices),
            prob_product: rares.prob_product(&indices),
        }
    }

    /// Positions of the literals in the rare-net set; None if any literal
    /// is not listed there with the same polarity.
    pub fn rare_indices(&self, rares: &RareNetSet) -> Option<Vec<usize>> {
        self.literals
            .iter()
            .map(|&(net, v)| {
                rares
                    .position(net)
                    .filter(|&i| rares.get(i).rare_value == v)
            })
            .collect()
    }

    pub fn query(&self) -> Result<CompatQuery, QueryError> {
        CompatQuery::new(self.literals.clone())
    }

    pub fn width(&self) -> usize {
        self.literals.len()
    }
}

/// JSON descriptor of one inserted (or insertable) Trojan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrojanDescriptor {
    pub trigger: Vec<TriggerLiteral>,
    pub payload_target: String,
    pub seed: u64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriggerLiteral {
    pub net: String,
    pub rare_value: u8,
}

impl TrojanDescriptor {
    pub fn candidate(&self, netlist: &Netlist) -> Result<TriggerCandidate, TrojanError> {
        let mut literals = Vec::with_capacity(self.trigger.len());
        for lit in &self.trigger {
            let net = netlist
                .net_id(&lit.net)
                .ok_or(NetlistError::UnknownNet {
                    name: lit.net.clone(),
                })?;
            literals.push((net, lit.rare_value != 0));
        }
        literals.sort_unstable_by_key(|&(n, _)| n);
        Ok(TriggerCandidate {
            literals,
            prob_product: 0.0,
        })
    }

    pub fn payload_net(&self, netlist: &Netlist) -> Result<NetId, TrojanError> {
        netlist
            .net_id(&self.payload_target)
            .ok_or_else(|| {
                TrojanError::Netlist(NetlistError::UnknownNet {
                    name: self.payload_target.clone(),
                })
            })
    }
}

/// A Trojan stitched into a host netlist.
#[derive(Clone, Debug)]
pub struct TrojanInstance {
    pub netlist: Netlist,
    pub descriptor: TrojanDescriptor,
    /// Name of the trigger-enable net inside `netlist`.
    pub trigger_net: String,
    /// Name of the XOR output that replaced the payload target.
    pub payload_net: String,
    pub added_gates: usize,
}

/// Shortest prefix family `ht`, `ht0`, `ht1`, ... that no existing name in
/// any given netlist starts with.
fn unique_prefix(netlists: &[&Netlist]) -> String {
    let clashes = |p: &str| {
        netlists.iter().any(|n| {
            (0..n.num_nets()).any(|i| n.net_name(NetId::from_index(i)).starts_with(p))
        })
    };
    if !clashes("ht") {
        return "ht".to_string();
    }
    for k in 0u64.. {
        let p = format!("ht{k}");
        if !clashes(&p) {
            return p;
        }
    }
    unreachable!("some numeric prefix is free")
}

/// Append the trigger subgraph (inverters for rare-0 literals plus a
/// balanced 2-input AND tree) to a copy of `base`. Returns the extended
/// netlist and the name of the enable net, which is 1 exactly when every
/// literal sits at its rare value.
pub fn attach_trigger(
    base: &Netlist,
    literals: &[(NetId, bool)],
) -> Result<(Netlist, String), TrojanError> {
    let prefix = unique_prefix(&[base]);
    let mut builder = copy_into_builder(base, None);
    let enable = build_trigger_gates(&mut builder, base, literals, &prefix)?;
    Ok((builder.finish()?, enable))
}

fn copy_into_builder(
    base: &Netlist,
    payload_redirect: Option<(NetId, &str)>,
) -> crate::netlist::NetlistBuilder {
    let mut builder = Netlist::builder();
    for &pi in base.primary_inputs() {
        builder.input(base.net_name(pi)).expect("fresh builder");
    }
    for &po in base.primary_outputs() {
        let name = match payload_redirect {
            Some((target, new_name)) if po == target => new_name,
            _ => base.net_name(po),
        };
        builder.output(name).expect("fresh builder");
    }
    for gate in base.gates() {
        let out = builder.net(base.net_name(gate.output));
        let inputs = gate
            .inputs
            .iter()
            .map(|&i| {
                let name = match payload_redirect {
                    Some((target, new_name)) if i == target => new_name,
                    _ => base.net_name(i),
                };
                builder.net(name)
            })
            .collect();
        builder.gate(gate.kind, inputs, out).expect("arity preserved");
    }
    builder
}

fn build_trigger_gates(
    builder: &mut crate::netlist::NetlistBuilder,
    base: &Netlist,
    literals: &[(NetId, bool)],
    prefix: &str,
) -> Result<String, TrojanError> {
    assert!(!literals.is_empty(), "trigger needs at least one literal");
    let mut leaves: Vec<(NetId, String)> = Vec::with_capacity(literals.len());
    let mut inv = 0usize;
    for &(net, value) in literals {
        let src_name = base.net_name(net).to_string();
        let src = builder.net(&src_name);
        if value {
            leaves.push((src, src_name));
        } else {
            let name = format!("{prefix}_inv{inv}");
            inv += 1;
            let out = builder.net(&name);
            builder.gate(GateKind::Not, vec![src], out)?;
            leaves.push((out, name));
        }
    }
    // Balanced 2-input AND tree: pair up level by level.
    let mut level = leaves;
    let mut and_idx = 0usize;
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match pair {
                [(a, _), (b, _)] => {
                    let name = format!("{prefix}_and{and_idx}");
                    and_idx += 1;
                    let out = builder.net(&name);
                    builder.gate(GateKind::And, vec![*a, *b], out)?;
                    next.push((out, name));
                }
                [leaf] => next.push(leaf.clone()),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    let (enable, enable_name) = level.into_iter().next().expect("tree has a root");
    if literals.len() == 1 && literals[0].1 {
        // Single positive literal: alias it so the enable is an added net
        // rather than a host net.
        let name = format!("{prefix}_trig");
        let out = builder.net(&name);
        builder.gate(GateKind::Buf, vec![enable], out)?;
        return Ok(name);
    }
    Ok(enable_name)
}

/// Insert a Trojan: trigger AND tree over `candidate`, payload XOR spliced
/// into `payload_target` (or a seeded random legal target). Every consumer
/// of the target, including output pins, is rewired to the XOR output, so
/// the design is functionally identical whenever the trigger is 0.
pub fn insert_trojan(
    base: &Netlist,
    candidate: &TriggerCandidate,
    payload_target: Option<NetId>,
    seed: u64,
    provenance: Provenance,
) -> Result<TrojanInstance, TrojanError> {
    let trigger_nets: Vec<NetId> = candidate.literals.iter().map(|&(n, _)| n).collect();
    let cone = base.fanin_cone(&trigger_nets);
    let observable = base.observable_nets();
    let legal = |net: NetId| -> Result<(), TrojanError> {
        let name = || base.net_name(net).to_string();
        if base.is_primary_input(net) {
            return Err(TrojanError::TargetIsPrimaryInput { net: name() });
        }
        if bit(&cone, net.index()) {
            return Err(TrojanError::TargetInTriggerCone { net: name() });
        }
        if !bit(&observable, net.index()) {
            return Err(TrojanError::TargetNotObservable { net: name() });
        }
        Ok(())
    };
    let target = match payload_target {
        Some(t) => {
            legal(t)?;
            t
        }
        None => {
            let candidates: Vec<NetId> = (0..base.num_nets())
                .map(NetId::from_index)
                .filter(|&n| legal(n).is_ok())
                .collect();
            if candidates.is_empty() {
                return Err(TrojanError::NoLegalTarget);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::IndexedRandom;
            *candidates.choose(&mut rng).expect("nonempty")
        }
    };

    let prefix = unique_prefix(&[base]);
    let payload_name = format!("{prefix}_payload");
    let mut builder = copy_into_builder(base, Some((target, &payload_name)));
    let enable_name = build_trigger_gates(&mut builder, base, &candidate.literals, &prefix)?;
    let enable = builder.net(&enable_name);
    let target_net = builder.net(base.net_name(target));
    let payload = builder.net(&payload_name);
    builder.gate(GateKind::Xor, vec![target_net, enable], payload)?;
    let netlist = builder.finish()?;
    let added_gates = netlist.num_gates() - base.num_gates();
    debug_assert!(added_gates <= 2 * candidate.width());

    let descriptor = TrojanDescriptor {
        trigger: candidate
            .literals
            .iter()
            .map(|&(n, v)| TriggerLiteral {
                net: base.net_name(n).to_string(),
                rare_value: u8::from(v),
            })
            .collect(),
        payload_target: base.net_name(target).to_string(),
        seed,
        provenance,
    };
    Ok(TrojanInstance {
        netlist,
        descriptor,
        trigger_net: enable_name,
        payload_net: payload_name,
        added_gates,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validity {
    Valid,
    /// Trigger literals jointly unsatisfiable.
    IncompatibleTrigger,
    /// No input both fires the trigger and propagates the flip to an output.
    NeverObservable,
    /// SAT budget exhausted before a verdict.
    Unverified,
}

#[derive(Debug)]
pub struct VerifyReport {
    pub validity: Validity,
    /// Input pattern that fires the trigger and flips an output.
    pub witness: Option<PatternSet>,
}

/// Miter check: is there an input that drives every trigger literal rare
/// and makes some primary output differ between golden and infected
/// netlists?
pub fn verify_validity(
    base: &Netlist,
    instance: &TrojanInstance,
    checker: &CompatChecker,
    budget: u64,
) -> Result<VerifyReport, TrojanError> {
    let candidate = instance.descriptor.candidate(base)?;
    match checker.check(&candidate.query()?) {
        CompatVerdict::Incompatible => {
            return Ok(VerifyReport {
                validity: Validity::IncompatibleTrigger,
                witness: None,
            })
        }
        CompatVerdict::Unknown => {
            return Ok(VerifyReport {
                validity: Validity::Unverified,
                witness: None,
            })
        }
        CompatVerdict::Compatible => {}
    }

    let ht = &instance.netlist;
    if base.primary_outputs().is_empty() {
        return Ok(VerifyReport {
            validity: Validity::NeverObservable,
            witness: None,
        });
    }
    let stem = unique_prefix(&[base, ht]);
    let gp = format!("{stem}g");
    let hp = format!("{stem}h");
    let mut builder = Netlist::builder();
    for &pi in base.primary_inputs() {
        builder.input(base.net_name(pi))?;
    }
    let rename = |owner: &Netlist, prefix: &str, net: NetId| -> String {
        if owner.is_primary_input(net) {
            owner.net_name(net).to_string()
        } else {
            format!("{prefix}_{}", owner.net_name(net))
        }
    };
    for (owner, prefix) in [(base, gp.as_str()), (ht, hp.as_str())] {
        for gate in owner.gates() {
            let out = builder.net(&rename(owner, prefix, gate.output));
            let inputs = gate
                .inputs
                .iter()
                .map(|&i| builder.net(&rename(owner, prefix, i)))
                .collect();
            builder.gate(gate.kind, inputs, out)?;
        }
    }
    let mut diffs = Vec::new();
    debug_assert_eq!(base.primary_outputs().len(), ht.primary_outputs().len());
    for (k, (&gpo, &hpo)) in base
        .primary_outputs()
        .iter()
        .zip(ht.primary_outputs())
        .enumerate()
    {
        let g = builder.net(&rename(base, &gp, gpo));
        let h = builder.net(&rename(ht, &hp, hpo));
        let d = builder.net(&format!("{gp}_diff{k}"));
        builder.gate(GateKind::Xor, vec![g, h], d)?;
        diffs.push(d);
    }
    let miter_out = builder.net(&format!("{gp}_miter"));
    builder.gate(GateKind::Or, diffs, miter_out)?;
    let miter_name = format!("{gp}_miter");
    let miter = {
        let mut b = builder;
        // Declare the miter output as PO so observability validation holds.
        b.output(&miter_name)?;
        b.finish()?
    };

    let cnf = encode_netlist(&miter);
    let mut solver = Solver::new(&cnf);
    let mut assumptions = vec![net_lit(miter.net_id(&miter_name).expect("declared"), true)];
    for lit in &instance.descriptor.trigger {
        // Primary inputs are shared between the two copies; everything else
        // constrains the golden copy.
        let base_net = base.net_id(&lit.net).ok_or(NetlistError::UnknownNet {
            name: lit.net.clone(),
        })?;
        let net = miter
            .net_id(&rename(base, &gp, base_net))
            .ok_or(NetlistError::UnknownNet {
                name: lit.net.clone(),
            })?;
        assumptions.push(net_lit(net, lit.rare_value != 0));
    }
    match solver.solve(&assumptions, budget) {
        SolveResult::Sat => {
            let pis = base.primary_inputs();
            let bits: Vec<bool> = pis
                .iter()
                .map(|&pi| {
                    let var = miter
                        .net_id(base.net_name(pi))
                        .expect("shared primary input")
                        .index() as u32;
                    solver.model_value(var)
                })
                .collect();
            Ok(VerifyReport {
                validity: Validity::Valid,
                witness: Some(PatternSet::from_patterns(pis.len(), &[bits])),
            })
        }
        SolveResult::Unsat => Ok(VerifyReport {
            validity: Validity::NeverObservable,
            witness: None,
        }),
        SolveResult::Unknown => Ok(VerifyReport {
            validity: Validity::Unverified,
            witness: None,
        }),
    }
}

/// Uniformly sample width-`t_wid` rare subsets until one is jointly
/// satisfiable. Returns the candidate and the number of draws spent.
pub fn random_trigger(
    rares: &RareNetSet,
    checker: &CompatChecker,
    t_wid: usize,
    seed: u64,
    max_draws: u64,
) -> Result<(TriggerCandidate, u64), TrojanError> {
    if rares.len() < t_wid {
        return Err(TrojanError::NotEnoughRareNets {
            width: t_wid,
            available: rares.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 1..=max_draws {
        let picked = rand::seq::index::sample(&mut rng, rares.len(), t_wid).into_vec();
        let candidate = TriggerCandidate::from_rare_indices(rares, &picked);
        if checker.check(&candidate.query()?) == CompatVerdict::Compatible {
            return Ok((candidate, draw));
        }
    }
    Err(TrojanError::BudgetExhausted {
        budget: max_draws,
        found: 0,
    })
}

/// Stopping rule for the trimmed random baseline.
#[derive(Clone, Copy, Debug)]
pub enum StopRule {
    Duration(Duration),
    Draws(u64),
}

/// Trimmed sequential random baseline: grow a width-`t_wid` set by uniform
/// draws restricted to nets pairwise compatible with everything chosen so
/// far, then keep it only if it is jointly satisfiable and no characterized
/// set covers it. Duplicates are dropped.
pub fn minus_rl_triggers(
    data: &CharacterizationData,
    rares: &RareNetSet,
    checker: &CompatChecker,
    t_wid: usize,
    seed: u64,
    stop: StopRule,
) -> Result<Vec<TriggerCandidate>, TrojanError> {
    if rares.len() < t_wid {
        return Err(TrojanError::NotEnoughRareNets {
            width: t_wid,
            available: rares.len(),
        });
    }
    let table = data.pair_table();
    let n = rares.len();
    let words = n.div_ceil(64);
    let solo: Vec<u64> = {
        let mut m = vec![0u64; words];
        for i in 0..n {
            if table.entry(i, i) {
                m[i / 64] |= 1u64 << (i % 64);
            }
        }
        m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    let started = Instant::now();
    let mut draws = 0u64;
    loop {
        match stop {
            StopRule::Duration(d) => {
                if started.elapsed() >= d {
                    break;
                }
            }
            StopRule::Draws(max) => {
                if draws >= max {
                    break;
                }
            }
        }
        draws += 1;
        let mut mask = solo.clone();
        let mut members: Vec<usize> = Vec::with_capacity(t_wid);
        while members.len() < t_wid {
            let pool = bitset_members_masked(&mask, n);
            if pool.is_empty() {
                break;
            }
            use rand::seq::IndexedRandom;
            let &pick = pool.choose(&mut rng).expect("nonempty pool");
            members.push(pick);
            for (m, r) in mask.iter_mut().zip(table.row(pick)) {
                *m &= r;
            }
            mask[pick / 64] &= !(1u64 << (pick % 64));
        }
        if members.len() < t_wid {
            continue;
        }
        members.sort_unstable();
        if seen.contains(&members) {
            continue;
        }
        if data.covered(&members) {
            continue;
        }
        let candidate = TriggerCandidate::from_rare_indices(rares, &members);
        if checker.check(&candidate.query()?) != CompatVerdict::Compatible {
            continue;
        }
        seen.insert(members);
        out.push(candidate);
    }
    Ok(out)
}

fn bitset_members_masked(words: &[u64], n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (w, &word) in words.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let idx = w * 64 + bits.trailing_zeros() as usize;
            if idx < n {
                out.push(idx);
            }
            bits &= bits - 1;
        }
    }
    out
}

/// Sample satisfiable width-`t_wid` triggers that the given pattern set
/// never fully activates. `max_draws` bounds rejection sampling.
pub fn evading_triggers(
    netlist: &Netlist,
    rares: &RareNetSet,
    checker: &CompatChecker,
    patterns: &PatternSet,
    t_wid: usize,
    count: usize,
    seed: u64,
    max_draws: u64,
) -> Result<Vec<TriggerCandidate>, TrojanError> {
    if rares.len() < t_wid {
        return Err(TrojanError::NotEnoughRareNets {
            width: t_wid,
            available: rares.len(),
        });
    }
    let sim = simulate(netlist, patterns).expect("aligned patterns");
    let rows: Vec<Vec<u64>> = rares
        .iter()
        .map(|r| sim.at_value_row(r.net, r.rare_value))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..max_draws {
        if out.len() >= count {
            return Ok(out);
        }
        let mut picked = rand::seq::index::sample(&mut rng, rares.len(), t_wid).into_vec();
        picked.sort_unstable();
        if seen.contains(&picked) {
            continue;
        }
        let words = rows[picked[0]].len();
        let activated = (0..words).any(|w| picked.iter().fold(u64::MAX, |acc, &r| acc & rows[r][w]) != 0);
        if activated {
            continue;
        }
        let candidate = TriggerCandidate::from_rare_indices(rares, &picked);
        if checker.check(&candidate.query()?) != CompatVerdict::Compatible {
            continue;
        }
        seen.insert(picked);
        out.push(candidate);
    }
    if out.len() >= count {
        Ok(out)
    } else {
        Err(TrojanError::BudgetExhausted {
            budget: max_draws,
            found: out.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charact::{build_pair_table, characterize};
    use crate::logicsim::{simulate, RareNet};
    use crate::netlist::parse_bench;
    use crate::satcore::DEFAULT_CONFLICT_BUDGET;
    use std::sync::Arc;

    const HOST: &str = "INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(f)\nOUTPUT(g)\n\
         w = AND(a, b)\nx = OR(b, c)\nf = XOR(w, x)\ng = AND(w, c)\n";

    fn host() -> Arc<Netlist> {
        Arc::new(parse_bench(HOST).unwrap())
    }

    fn lits(netlist: &Netlist, spec: &[(&str, bool)]) -> Vec<(NetId, bool)> {
        let mut v: Vec<(NetId, bool)> = spec
            .iter()
            .map(|&(n, val)| (netlist.net_id(n).unwrap(), val))
            .collect();
        v.sort_unstable_by_key(|&(n, _)| n);
        v
    }

    fn candidate(netlist: &Netlist, spec: &[(&str, bool)]) -> TriggerCandidate {
        TriggerCandidate {
            literals: lits(netlist, spec),
            prob_product: 0.1,
        }
    }

    /// Manual rare set over the 2x2 conflict design: two complementary pairs
    /// where only cross pairs are compatible.
    const TWO_BRANCH: &str = "INPUT(i1)\nINPUT(i2)\nINPUT(i3)\nINPUT(i4)\nOUTPUT(o)\n\
         ni2 = NOT(i2)\nni4 = NOT(i4)\n\
         p1 = AND(i1, i2)\np2 = AND(i1, ni2)\nq1 = AND(i3, i4)\nq2 = AND(i3, ni4)\n\
         o = OR(p1, p2, q1, q2)\n";

    fn two_branch() -> (Arc<Netlist>, RareNetSet, CompatChecker) {
        let netlist = Arc::new(parse_bench(TWO_BRANCH).unwrap());
        let rares = RareNetSet::from_items(
            ["p1", "p2", "q1", "q2"]
                .iter()
                .map(|n| RareNet {
                    net: netlist.net_id(n).unwrap(),
                    rare_value: true,
                    prob: 0.25,
                })
                .collect(),
        );
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        (netlist, rares, checker)
    }

    #[test]
    fn attach_trigger_enable_is_conjunction_of_literals() {
        let base = host();
        for spec in [
            vec![("w", true), ("c", false)],
            vec![("w", true)],
            vec![("x", false)],
            vec![("w", true), ("x", true), ("g", false)],
        ] {
            let literals = lits(&base, &spec);
            let (extended, enable) = attach_trigger(&base, &literals).unwrap();
            let patterns = PatternSet::exhaustive(3);
            let sim = simulate(&extended, &patterns).unwrap();
            let enable_net = extended.net_id(&enable).unwrap();
            for p in 0..patterns.len() {
                let want = literals
                    .iter()
                    .all(|&(n, v)| sim.value(extended.net_id(base.net_name(n)).unwrap(), p) == v);
                assert_eq!(sim.value(enable_net, p), want, "spec {spec:?} pattern {p}");
            }
        }
    }

    #[test]
    fn inserted_trojan_is_silent_off_trigger_and_flips_on_trigger() {
        let base = host();
        let cand = candidate(&base, &[("w", true), ("c", false)]);
        let target = base.net_id("x").unwrap();
        let instance =
            insert_trojan(&base, &cand, Some(target), 1, Provenance::Random).unwrap();
        assert!(instance.added_gates <= 2 * cand.width());

        let patterns = PatternSet::exhaustive(3);
        let golden = simulate(&base, &patterns).unwrap();
        let infected = simulate(&instance.netlist, &patterns).unwrap();
        let trig = instance.netlist.net_id(&instance.trigger_net).unwrap();
        let mut fired = 0;
        for p in 0..patterns.len() {
            let active = cand
                .literals
                .iter()
                .all(|&(n, v)| golden.value(n, p) == v);
            assert_eq!(infected.value(trig, p), active);
            let diff = base.primary_outputs().iter().zip(instance.netlist.primary_outputs()).any(
                |(&gpo, &hpo)| golden.value(gpo, p) != infected.value(hpo, p),
            );
            if active {
                fired += 1;
                assert!(diff, "active trigger must corrupt an output (pattern {p})");
            } else {
                assert!(!diff, "silent off-trigger violated at pattern {p}");
            }
        }
        assert!(fired > 0, "exhaustive run must hit the trigger");
    }

    #[test]
    fn payload_on_output_pin_rewires_the_pin() {
        let base = host();
        let cand = candidate(&base, &[("x", false)]);
        let target = base.net_id("g").unwrap();
        let instance = insert_trojan(&base, &cand, Some(target), 3, Provenance::Rl).unwrap();
        let patterns = PatternSet::exhaustive(3);
        let golden = simulate(&base, &patterns).unwrap();
        let infected = simulate(&instance.netlist, &patterns).unwrap();
        let hpo = *instance.netlist.primary_outputs().last().unwrap();
        assert_eq!(
            instance.netlist.net_name(hpo),
            instance.payload_net,
            "second output should now be the payload xor"
        );
        for p in 0..patterns.len() {
            let active = golden.value(base.net_id("x").unwrap(), p) == false;
            let g = golden.value(base.net_id("g").unwrap(), p);
            assert_eq!(infected.value(hpo, p), g ^ active);
        }
    }

    #[test]
    fn illegal_payload_targets_are_rejected() {
        let base = host();
        let cand = candidate(&base, &[("x", true)]);
        let pi = base.net_id("b").unwrap();
        assert!(matches!(
            insert_trojan(&base, &cand, Some(pi), 0, Provenance::Random),
            Err(TrojanError::TargetIsPrimaryInput { .. })
        ));
        let in_cone = base.net_id("x").unwrap();
        assert!(matches!(
            insert_trojan(&base, &cand, Some(in_cone), 0, Provenance::Random),
            Err(TrojanError::TargetInTriggerCone { .. })
        ));

        let dangling = parse_bench(
            "INPUT(a)\nINPUT(b)\nOUTPUT(f)\nd = AND(a, b)\nf = OR(a, b)\n",
        )
        .unwrap();
        let cand = candidate(&dangling, &[("f", false)]);
        let d = dangling.net_id("d").unwrap();
        assert!(matches!(
            insert_trojan(&dangling, &cand, Some(d), 0, Provenance::Random),
            Err(TrojanError::TargetNotObservable { .. })
        ));
    }

    #[test]
    fn random_payload_choice_is_seed_deterministic() {
        let base = host();
        let cand = candidate(&base, &[("w", true)]);
        let a = insert_trojan(&base, &cand, None, 42, Provenance::Rl).unwrap();
        let b = insert_trojan(&base, &cand, None, 42, Provenance::Rl).unwrap();
        assert_eq!(a.descriptor.payload_target, b.descriptor.payload_target);
        assert_eq!(a.netlist.emit_bench(), b.netlist.emit_bench());
    }

    #[test]
    fn verify_accepts_valid_and_rejects_incompatible_and_masked() {
        let base = host();
        let checker = CompatChecker::new(Arc::clone(&base), DEFAULT_CONFLICT_BUDGET);
        let cand = candidate(&base, &[("w", true), ("c", false)]);
        let target = base.net_id("x").unwrap();
        let instance =
            insert_trojan(&base, &cand, Some(target), 1, Provenance::Random).unwrap();
        let report = verify_validity(&base, &instance, &checker, 1 << 20).unwrap();
        assert_eq!(report.validity, Validity::Valid);
        let witness = report.witness.unwrap();
        let golden = simulate(&base, &witness).unwrap();
        for &(n, v) in &cand.literals {
            assert_eq!(golden.value(n, 0), v, "witness must fire the trigger");
        }
        let infected = simulate(&instance.netlist, &witness).unwrap();
        assert!(
            base.primary_outputs()
                .iter()
                .zip(instance.netlist.primary_outputs())
                .any(|(&g, &h)| golden.value(g, 0) != infected.value(h, 0)),
            "witness must expose an output difference"
        );

        // Contradictory trigger: w=1 needs a&b, nw=1 needs not w.
        let contradictory = parse_bench(
            "INPUT(a)\nINPUT(b)\nOUTPUT(f)\nw = AND(a, b)\nnw = NOT(w)\nf = OR(w, nw)\n",
        )
        .unwrap();
        let contradictory = Arc::new(contradictory);
        let checker2 = CompatChecker::new(Arc::clone(&contradictory), DEFAULT_CONFLICT_BUDGET);
        let bad = candidate(&contradictory, &[("w", true), ("nw", true)]);
        let inst =
            insert_trojan(&contradictory, &bad, None, 9, Provenance::Random).unwrap();
        let report = verify_validity(&contradictory, &inst, &checker2, 1 << 20).unwrap();
        assert_eq!(report.validity, Validity::IncompatibleTrigger);

        // Masked payload: p = OR(t, x, nx) is constantly 1, so flipping t
        // never reaches the output.
        let masked = Arc::new(
            parse_bench(
                "INPUT(a)\nINPUT(b)\nOUTPUT(p)\n\
                 nx = NOT(a)\nt = AND(a, b)\np = OR(t, a, nx)\n",
            )
            .unwrap(),
        );
        let checker3 = CompatChecker::new(Arc::clone(&masked), DEFAULT_CONFLICT_BUDGET);
        let cand3 = candidate(&masked, &[("nx", true)]);
        let t = masked.net_id("t").unwrap();
        let inst3 = insert_trojan(&masked, &cand3, Some(t), 0, Provenance::Random).unwrap();
        let report3 = verify_validity(&masked, &inst3, &checker3, 1 << 20).unwrap();
        assert_eq!(report3.validity, Validity::NeverObservable);
    }

    #[test]
    fn random_trigger_finds_compatible_sets_and_reports_draw_budget() {
        let (_netlist, rares, checker) = two_branch();
        let (cand, draws) = random_trigger(&rares, &checker, 2, 11, 1000).unwrap();
        assert!(draws >= 1);
        assert_eq!(cand.width(), 2);
        assert_eq!(checker.check(&cand.query().unwrap()), CompatVerdict::Compatible);
        assert!((cand.prob_product - 0.0625).abs() < 1e-12);

        // Restricting to the two conflicting nets exhausts the budget.
        let (netlist, _, _) = two_branch();
        let conflicting = RareNetSet::from_items(
            ["p1", "p2"]
                .iter()
                .map(|n| RareNet {
                    net: netlist.net_id(n).unwrap(),
                    rare_value: true,
                    prob: 0.25,
                })
                .collect(),
        );
        let checker2 = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        assert!(matches!(
            random_trigger(&conflicting, &checker2, 2, 1, 50),
            Err(TrojanError::BudgetExhausted { budget: 50, .. })
        ));
        assert!(matches!(
            random_trigger(&conflicting, &checker2, 3, 1, 50),
            Err(TrojanError::NotEnoughRareNets { .. })
        ));
    }

    #[test]
    fn minus_rl_returns_exactly_the_uncovered_compatible_pairs() {
        let (netlist, rares, checker) = two_branch();
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 1, 5, false);
        let covered_pair = data.set_members(0);
        assert_eq!(covered_pair.len(), 2, "one p and one q");

        let found = minus_rl_triggers(&data, &rares, &checker, 2, 21, StopRule::Draws(300))
            .unwrap();
        let mut got: Vec<Vec<String>> = found
            .iter()
            .map(|c| {
                c.literals
                    .iter()
                    .map(|&(n, _)| netlist.net_name(n).to_string())
                    .collect()
            })
            .collect();
        got.sort();
        // All cross pairs except the single covered one.
        let all_cross = [["p1", "q1"], ["p1", "q2"], ["p2", "q1"], ["p2", "q2"]];
        let covered_names: Vec<String> = covered_pair
            .iter()
            .map(|&i| netlist.net_name(rares.get(i).net).to_string())
            .collect();
        let mut want: Vec<Vec<String>> = all_cross
            .iter()
            .filter(|pair| {
                !(pair.contains(&covered_names[0].as_str())
                    && pair.contains(&covered_names[1].as_str()))
            })
            .map(|pair| pair.iter().map(|s| s.to_string()).collect())
            .collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn evading_triggers_avoid_given_patterns() {
        let (netlist, rares, checker) = two_branch();
        // Single pattern 1111 activates p1 and q1 together.
        let patterns = PatternSet::from_patterns(4, &[vec![true; 4]]);
        let found =
            evading_triggers(&netlist, &rares, &checker, &patterns, 2, 3, 17, 5000).unwrap();
        assert_eq!(found.len(), 3);
        let sim = simulate(&netlist, &patterns).unwrap();
        for cand in &found {
            let active = cand
                .literals
                .iter()
                .all(|&(n, v)| sim.value(n, 0) == v);
            assert!(!active, "pattern must not fire an evading trigger");
            assert_eq!(checker.check(&cand.query().unwrap()), CompatVerdict::Compatible);
        }
        // Only three evading pairs exist, so asking for four must fail.
        assert!(matches!(
            evading_triggers(&netlist, &rares, &checker, &patterns, 2, 4, 17, 2000),
            Err(TrojanError::BudgetExhausted { found: 3, .. })
        ));
    }

    #[test]
    fn descriptor_json_round_trip() {
        let base = host();
        let cand = candidate(&base, &[("w", true), ("c", false)]);
        let instance =
            insert_trojan(&base, &cand, None, 77, Provenance::MinusRl).unwrap();
        let json = serde_json::to_string_pretty(&instance.descriptor).unwrap();
        assert!(json.contains("\"minus_rl\""));
        let back: TrojanDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back.payload_target, instance.descriptor.payload_target);
        assert_eq!(back.seed, 77);
        assert_eq!(back.provenance, Provenance::MinusRl);
        let cand2 = back.candidate(&base).unwrap();
        assert_eq!(cand2.literals, cand.literals);
    }
}
