//! Synthetic benchmark-scale designs.
//!
//! The evaluation flow targets combinational test views of classic
//! gate-level benchmark circuits. Those files cannot be vendored here, so
//! this module generates deterministic stand-ins with matching coarse
//! statistics: a parallel array multiplier for the arithmetic class and
//! column-local layered random logic for the control-heavy classes. Each
//! named profile has a frozen seed, so regenerating a design always yields
//! byte-identical bench text.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netlist::{GateKind, NetId, Netlist, NetlistBuilder};

/// Ten-gate fixture with two compatible rare nets; used by pipeline smoke
/// tests.
pub const TOY_BENCH: &str = "\
INPUT(a)
INPUT(b)
INPUT(c)
INPUT(d)
INPUT(e)
OUTPUT(f)
OUTPUT(g)
n1 = AND(a, b)
n2 = AND(c, d)
n3 = AND(n1, e)
n4 = NOR(a, c)
n5 = XOR(b, d)
n6 = OR(n3, n2)
n7 = AND(a, n2)
n8 = NAND(n5, e)
f = AND(n6, n8)
g = OR(n4, n7)
";

pub fn toy() -> Netlist {
    crate::netlist::parse_bench(TOY_BENCH).expect("toy fixture parses")
}

/// Unsigned array multiplier: `width` x `width` bits in, `2*width` bits
/// out. Partial products feed a ripple-carry accumulation built from half
/// and full adders.
pub fn multiplier(width: usize) -> Netlist {
    assert!(width >= 2, "multiplier width must be at least 2");
    let mut b = Netlist::builder();
    let a_bits: Vec<NetId> = (0..width)
        .map(|i| b.input(&format!("a{i}")).expect("fresh input"))
        .collect();
    let b_bits: Vec<NetId> = (0..width)
        .map(|i| b.input(&format!("b{i}")).expect("fresh input"))
        .collect();

    let mut cell = 0usize;
    let mut half_adder = |b: &mut NetlistBuilder, x: NetId, y: NetId| -> (NetId, NetId) {
        let s = b.net(&format!("ha{cell}_s"));
        let c = b.net(&format!("ha{cell}_c"));
        cell += 1;
        b.gate(GateKind::Xor, vec![x, y], s).expect("sum");
        b.gate(GateKind::And, vec![x, y], c).expect("carry");
        (s, c)
    };
    let mut fcell = 0usize;
    let mut full_adder =
        |b: &mut NetlistBuilder, x: NetId, y: NetId, cin: NetId| -> (NetId, NetId) {
            let t = b.net(&format!("fa{fcell}_t"));
            let s = b.net(&format!("fa{fcell}_s"));
            let g0 = b.net(&format!("fa{fcell}_g"));
            let g1 = b.net(&format!("fa{fcell}_h"));
            let c = b.net(&format!("fa{fcell}_c"));
            fcell += 1;
            b.gate(GateKind::Xor, vec![x, y], t).expect("xor1");
            b.gate(GateKind::Xor, vec![t, cin], s).expect("xor2");
            b.gate(GateKind::And, vec![x, y], g0).expect("gen");
            b.gate(GateKind::And, vec![t, cin], g1).expect("prop");
            b.gate(GateKind::Or, vec![g0, g1], c).expect("cout");
            (s, c)
        };

    // acc holds the running sum; element k is product bit k so far.
    let mut acc: Vec<NetId> = Vec::new();
    for (i, &ai) in a_bits.iter().enumerate() {
        let pp: Vec<NetId> = b_bits
            .iter()
            .enumerate()
            .map(|(j, &bj)| {
                let p = b.net(&format!("pp{i}_{j}"));
                b.gate(GateKind::And, vec![ai, bj], p).expect("partial");
                p
            })
            .collect();
        if i == 0 {
            acc = pp;
            continue;
        }
        // Add pp shifted left by i into acc[i..].
        let mut carry: Option<NetId> = None;
        for (j, &p) in pp.iter().enumerate() {
            let pos = i + j;
            let existing = acc.get(pos).copied();
            let (s, c) = match (existing, carry) {
                (Some(e), Some(cin)) => full_adder(&mut b, e, p, cin),
                (Some(e), None) => half_adder(&mut b, e, p),
                (None, Some(cin)) => half_adder(&mut b, p, cin),
                (None, None) => {
                    if pos < acc.len() {
                        unreachable!("existing bit handled above");
                    }
                    (p, NetId::from_index(usize::MAX))
                }
            };
            let c = if existing.is_none() && carry.is_none() {
                None
            } else {
                Some(c)
            };
            if pos < acc.len() {
                acc[pos] = s;
            } else {
                acc.push(s);
            }
            carry = c;
        }
        if let Some(cin) = carry {
            acc.push(cin);
        }
    }
    while acc.len() < 2 * width {
        // Only possible for degenerate widths; keep the output vector full.
        let z = b.net(&format!("zero{}", acc.len()));
        b.gate(GateKind::Xor, vec![a_bits[0], a_bits[0]], z)
            .expect("constant zero");
        acc.push(z);
    }
    for (k, &bit) in acc.iter().enumerate().take(2 * width) {
        let name = format!("p{k}");
        let po = b.net(&name);
        b.gate(GateKind::Buf, vec![bit], po).expect("output buffer");
        b.output(&name).expect("declare output");
    }
    b.finish().expect("multiplier is well formed")
}

/// Parameters for the column-local layered random generator.
#[derive(Clone, Debug)]
pub struct LayeredParams {
    /// Core primary inputs feeding the layered logic.
    pub inputs: usize,
    /// Gates per layer, front to back.
    pub layers: Vec<usize>,
    /// Nets from the last layer promoted to primary outputs.
    pub outputs: usize,
    /// Columns per layer; a gate draws inputs from nearby columns of the
    /// two preceding layers, which keeps cones loosely clustered.
    pub columns: usize,
    /// Address-decoder banks on dedicated inputs. Each bank adds
    /// `DECODER_WINDOW` extra primary inputs and one detector gate tree per
    /// window value, giving the design a family of mutually exclusive rare
    /// nets alongside the organic ones from the layered core.
    pub banks: usize,
    pub seed: u64,
}

/// Window width in bits of one decoder bank; each bank contributes
/// `2^DECODER_WINDOW` one-hot detector nets with signal probability
/// `2^-DECODER_WINDOW`.
pub const DECODER_WINDOW: usize = 5;

/// Weighted gate mix: conjunctive gates dominate so that deep nets develop
/// skewed signal probabilities and a usable rare-net population.
const GATE_MIX: [(GateKind, u32); 7] = [
    (GateKind::And, 28),
    (GateKind::Nand, 10),
    (GateKind::Or, 18),
    (GateKind::Nor, 16),
    (GateKind::Xor, 14),
    (GateKind::Xnor, 6),
    (GateKind::Not, 8),
];

fn pick_kind(rng: &mut ChaCha8Rng) -> GateKind {
    let total: u32 = GATE_MIX.iter().map(|&(_, w)| w).sum();
    let mut roll = rng.random_range(0..total);
    for &(kind, w) in &GATE_MIX {
        if roll < w {
            return kind;
        }
        roll -= w;
    }
    unreachable!("weights exhausted")
}

/// Words per per-net simulation signature used for constant rejection.
const SIG_WORDS: usize = 16;

fn eval_sig(kind: GateKind, inputs: &[&Vec<u64>]) -> Vec<u64> {
    let mut out = inputs[0].clone();
    match kind {
        GateKind::Buf => {}
        GateKind::Not => out.iter_mut().for_each(|w| *w = !*w),
        GateKind::And | GateKind::Nand => {
            for sig in &inputs[1..] {
                out.iter_mut().zip(sig.iter()).for_each(|(w, s)| *w &= s);
            }
            if kind == GateKind::Nand {
                out.iter_mut().for_each(|w| *w = !*w);
            }
        }
        GateKind::Or | GateKind::Nor => {
            for sig in &inputs[1..] {
                out.iter_mut().zip(sig.iter()).for_each(|(w, s)| *w |= s);
            }
            if kind == GateKind::Nor {
                out.iter_mut().for_each(|w| *w = !*w);
            }
        }
        GateKind::Xor | GateKind::Xnor => {
            for sig in &inputs[1..] {
                out.iter_mut().zip(sig.iter()).for_each(|(w, s)| *w ^= s);
            }
            if kind == GateKind::Xnor {
                out.iter_mut().for_each(|w| *w = !*w);
            }
        }
    }
    out
}

fn is_constant_sig(sig: &[u64]) -> bool {
    sig.iter().all(|&w| w == 0) || sig.iter().all(|&w| w == !0u64)
}

/// Layered random logic with column locality plus optional decoder banks.
/// Unconsumed nets are gathered into OR observation points so nearly every
/// net reaches an output.
///
/// Every gate carries a random-simulation signature, and candidate gates
/// whose signature is constant are resampled. A provably constant net has a
/// constant signature under any stimulus, so the emitted design contains no
/// stuck nets; stuck nets would otherwise surface as rare nets that no
/// input pattern can ever drive to their rare value.
pub fn layered_random(params: &LayeredParams) -> Netlist {
    assert!(params.inputs >= 4 && params.columns >= 1 && !params.layers.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut sig_rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5159_0000_0000_0001);
    let mut b = Netlist::builder();
    let mut sigs: std::collections::HashMap<NetId, Vec<u64>> = std::collections::HashMap::new();
    let fresh_sig = |sigs: &mut std::collections::HashMap<NetId, Vec<u64>>,
                     rng: &mut ChaCha8Rng,
                     net: NetId| {
        let sig: Vec<u64> = (0..SIG_WORDS).map(|_| rng.random()).collect();
        sigs.insert(net, sig);
    };
    let pis: Vec<NetId> = (0..params.inputs)
        .map(|i| {
            let net = b.input(&format!("i{i}")).expect("fresh input");
            fresh_sig(&mut sigs, &mut sig_rng, net);
            net
        })
        .collect();
    let mut all_pis: Vec<NetId> = pis.clone();

    // Decoder banks: per bank, DECODER_WINDOW dedicated inputs and one
    // AND-tree detector per window value. Detectors of one bank are one-hot:
    // exactly one is high under any input, so any two are never high
    // together while each alone is easy to drive high.
    for k in 0..params.banks {
        let bits: Vec<NetId> = (0..DECODER_WINDOW)
            .map(|j| {
                let net = b.input(&format!("bank{k}_b{j}")).expect("fresh input");
                fresh_sig(&mut sigs, &mut sig_rng, net);
                all_pis.push(net);
                net
            })
            .collect();
        let inv: Vec<NetId> = bits
            .iter()
            .enumerate()
            .map(|(j, &bit)| {
                let net = b.net(&format!("bank{k}_n{j}"));
                b.gate(GateKind::Not, vec![bit], net).expect("inverter");
                let sig = eval_sig(GateKind::Not, &[&sigs[&bit]]);
                sigs.insert(net, sig);
                net
            })
            .collect();
        for v in 0..(1usize << DECODER_WINDOW) {
            let lit = |j: usize| if v >> j & 1 == 1 { bits[j] } else { inv[j] };
            let lo = b.net(&format!("bank{k}_d{v}_lo"));
            b.gate(GateKind::And, vec![lit(0), lit(1)], lo).expect("pair");
            let lo_sig = eval_sig(GateKind::And, &[&sigs[&lit(0)], &sigs[&lit(1)]]);
            sigs.insert(lo, lo_sig);
            let hi = b.net(&format!("bank{k}_d{v}_hi"));
            b.gate(GateKind::And, vec![lit(2), lit(3)], hi).expect("pair");
            let hi_sig = eval_sig(GateKind::And, &[&sigs[&lit(2)], &sigs[&lit(3)]]);
            sigs.insert(hi, hi_sig);
            // The intermediate pair gates sit at probability 1/4, above any
            // reasonable rareness threshold, so only the detector itself
            // lands in the rare population.
            let det = b.net(&format!("bank{k}_d{v}"));
            b.gate(GateKind::And, vec![lo, hi, lit(4)], det).expect("detector");
            let det_sig =
                eval_sig(GateKind::And, &[&sigs[&lo], &sigs[&hi], &sigs[&lit(4)]]);
            sigs.insert(det, det_sig);
        }
    }

    // prev[k] holds (net, column) pairs of layer k; layer 0 is the core PIs.
    let mut prev: Vec<Vec<(NetId, usize)>> = vec![pis
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, i * params.columns / params.inputs))
        .collect()];
    let mut gate_index = 0usize;
    for (li, &count) in params.layers.iter().enumerate() {
        let mut layer = Vec::with_capacity(count);
        for g in 0..count {
            let column = g * params.columns / count.max(1);
            // Resample the whole gate when its signature is constant.
            let mut accepted: Option<(GateKind, Vec<NetId>, Vec<u64>)> = None;
            for _attempt in 0..24 {
                let kind = pick_kind(&mut rng);
                let arity = match kind {
                    GateKind::Not => 1,
                    _ => {
                        if rng.random_bool(0.2) {
                            3
                        } else {
                            2
                        }
                    }
                };
                // Candidate feeders: previous two layers, filtered to nearby
                // columns (wrapping), falling back to the whole layer.
                let mut inputs: Vec<NetId> = Vec::with_capacity(arity);
                let mut guard = 0;
                while inputs.len() < arity {
                    guard += 1;
                    let source = if prev.len() >= 2 && rng.random_bool(0.3) {
                        &prev[prev.len() - 2]
                    } else {
                        &prev[prev.len() - 1]
                    };
                    let local: Vec<&(NetId, usize)> = source
                        .iter()
                        .filter(|&&(_, c)| {
                            let d = c.abs_diff(column);
                            d.min(params.columns - d) <= 1
                        })
                        .collect();
                    let &(net, _) = if local.is_empty() || guard > 8 {
                        source.choose(&mut rng).expect("layer nonempty")
                    } else {
                        local.choose(&mut rng).expect("local nonempty")
                    };
                    if !inputs.contains(&net) {
                        inputs.push(net);
                    } else if guard > 16 {
                        break;
                    }
                }
                if inputs.is_empty() {
                    continue;
                }
                let kind = if inputs.len() == 1 { GateKind::Not } else { kind };
                let in_sigs: Vec<&Vec<u64>> = inputs.iter().map(|n| &sigs[n]).collect();
                let sig = eval_sig(kind, &in_sigs);
                if is_constant_sig(&sig) {
                    continue;
                }
                accepted = Some((kind, inputs, sig));
                break;
            }
            let Some((kind, inputs, sig)) = accepted else {
                continue;
            };
            let out = b.net(&format!("g{li}_{gate_index}"));
            gate_index += 1;
            b.gate(kind, inputs, out).expect("acyclic by layering");
            sigs.insert(out, sig);
            layer.push((out, column));
        }
        prev.push(layer);
    }

    let last = prev.last().expect("layers nonempty").clone();
    let mut consumed: std::collections::HashSet<NetId> = std::collections::HashSet::new();
    for gate in b.gates_so_far() {
        for &i in &gate.inputs {
            consumed.insert(i);
        }
    }
    let mut outputs: Vec<NetId> = Vec::new();
    for &(net, _) in last.iter().take(params.outputs) {
        outputs.push(net);
    }
    // Observe dangling internal nets through OR trees; a chunk whose OR
    // would be stuck at 1 is emitted as direct outputs instead.
    let dangling: Vec<NetId> = b
        .interned_nets()
        .into_iter()
        .filter(|n| !consumed.contains(n) && !outputs.contains(n) && !all_pis.contains(n))
        .collect();
    for (k, chunk) in dangling.chunks(8).enumerate() {
        if chunk.len() == 1 {
            outputs.push(chunk[0]);
            continue;
        }
        let in_sigs: Vec<&Vec<u64>> = chunk.iter().map(|n| &sigs[n]).collect();
        if is_constant_sig(&eval_sig(GateKind::Or, &in_sigs)) {
            outputs.extend_from_slice(chunk);
            continue;
        }
        let obs = b.net(&format!("obs{k}"));
        b.gate(GateKind::Or, chunk.to_vec(), obs).expect("observe");
        outputs.push(obs);
    }
    for net in outputs {
        b.declare_output(net).expect("observation point");
    }
    b.finish().expect("layered design is well formed")
}

/// A named, frozen design profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Arithmetic class: 16x16 array multiplier.
    C6288Class,
    /// Wide combinational control logic.
    C7552Class,
    /// Scan-view class: many pseudo-inputs, moderate depth.
    S13207Class,
    /// Larger scan-view class.
    S15850Class,
    /// 64x64 multiplier, used for throughput measurements at 20K+ gates.
    Mult64,
    /// Ten-gate smoke-test fixture.
    Toy,
}

impl Profile {
    pub const ALL: [Profile; 6] = [
        Profile::C6288Class,
        Profile::C7552Class,
        Profile::S13207Class,
        Profile::S15850Class,
        Profile::Mult64,
        Profile::Toy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::C6288Class => "c6288_proxy",
            Profile::C7552Class => "c7552_proxy",
            Profile::S13207Class => "s13207_proxy",
            Profile::S15850Class => "s15850_proxy",
            Profile::Mult64 => "mult64",
            Profile::Toy => "toy",
        }
    }

    pub fn from_name(name: &str) -> Option<Profile> {
        Profile::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn generate(self) -> Netlist {
        match self {
            Profile::C6288Class => multiplier(16),
            Profile::C7552Class => layered_random(&LayeredParams {
                inputs: 113,
                layers: vec![240, 260, 280, 300, 300, 280, 240],
                outputs: 64,
                columns: 16,
                banks: 3,
                seed: 0x7552,
            }),
            Profile::S13207Class => layered_random(&LayeredParams {
                inputs: 241,
                layers: vec![360, 380, 400, 400, 380, 340],
                outputs: 96,
                columns: 24,
                banks: 3,
                seed: 0x13207,
            }),
            Profile::S15850Class => layered_random(&LayeredParams {
                inputs: 209,
                layers: vec![420, 440, 460, 460, 440, 400],
                outputs: 96,
                columns: 20,
                banks: 3,
                seed: 0x15850,
            }),
            Profile::Mult64 => multiplier(64),
            Profile::Toy => toy(),
        }
    }
}
