//! Gate-level netlist IR: dense net indices, combinational gates, validated
//! construction, and a full-scan view of sequential designs.

mod bench;
mod verilog;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use bench::{parse_bench, parse_bench_full_scan};
pub use verilog::{parse_verilog, parse_verilog_full_scan};

/// Dense index of a net within one [`Netlist`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetId(u32);

impl NetId {
    pub fn from_index(index: usize) -> NetId {
        NetId(u32::try_from(index).expect("net index fits in u32"))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for NetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Combinational gate primitive.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum GateKind {
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Not,
    Buf,
}

impl GateKind {
    /// Canonical bench-format spelling.
    pub fn name(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUFF",
        }
    }

    pub fn from_name(name: &str) -> Option<GateKind> {
        match name.to_ascii_uppercase().as_str() {
            "AND" => Some(GateKind::And),
            "NAND" => Some(GateKind::Nand),
            "OR" => Some(GateKind::Or),
            "NOR" => Some(GateKind::Nor),
            "XOR" => Some(GateKind::Xor),
            "XNOR" => Some(GateKind::Xnor),
            "NOT" => Some(GateKind::Not),
            "BUF" | "BUFF" => Some(GateKind::Buf),
            _ => None,
        }
    }

    /// NOT and BUF take exactly one input; every other kind takes one or more.
    pub fn fixed_arity(self) -> Option<usize> {
        match self {
            GateKind::Not | GateKind::Buf => Some(1),
            _ => None,
        }
    }
}

/// One gate: `output = kind(inputs...)`.
#[derive(Clone, Debug)]
pub struct Gate {
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

/// One scan flop recorded during full-scan lowering: `q = DFF(d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopPair {
    pub d: NetId,
    pub q: NetId,
}

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown gate kind `{kind}`")]
    UnknownGateKind { line: usize, kind: String },
    #[error("line {line}: sequential element `{net}` outside full-scan parsing")]
    SequentialElement { line: usize, net: String },
    #[error("line {line}: unsupported construct: {msg}")]
    Unsupported { line: usize, msg: String },
    #[error("net `{net}` has more than one driver")]
    DuplicateDriver { net: String },
    #[error("primary input `{net}` is driven by a gate")]
    DrivenInput { net: String },
    #[error("net `{net}` is neither a primary input nor a gate output")]
    Undriven { net: String },
    #[error("combinational cycle through net `{net}`")]
    Cycle { net: String },
    #[error("gate kind {kind:?} expects {expected} input(s), got {got}")]
    Arity {
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("duplicate declaration of `{net}`")]
    DuplicateDeclaration { net: String },
    #[error("unknown net `{name}`")]
    UnknownNet { name: String },
    #[error("flop Q net `{net}` is not a pseudo-primary input")]
    FlopNotInput { net: String },
}

/// Immutable, validated combinational netlist.
///
/// Net ids are dense and assigned in first-appearance order, so parsing the
/// same text always yields the same ids. Gates are stored in a topological
/// order computed at construction; the design is guaranteed acyclic, every
/// net has exactly one driver or is a primary input, and arities are checked.
#[derive(Clone, Debug)]
pub struct Netlist {
    names: Vec<String>,
    ids: HashMap<String, NetId>,
    gates: Vec<Gate>,
    /// Net index -> driving gate index, u32::MAX for primary inputs.
    driver: Vec<u32>,
    primary_inputs: Vec<NetId>,
    primary_outputs: Vec<NetId>,
    is_input: Vec<bool>,
    /// Gate indices in evaluation order.
    topo: Vec<u32>,
}

impl Netlist {
    pub fn builder() -> NetlistBuilder {
        NetlistBuilder::default()
    }

    pub fn num_nets(&self) -> usize {
        self.names.len()
    }

    pub fn num_gates(&self) -> usize {
        self.gates.len()
    }

    pub fn net_name(&self, net: NetId) -> &str {
        &self.names[net.index()]
    }

    pub fn net_id(&self, name: &str) -> Option<NetId> {
        self.ids.get(name).copied()
    }

    pub fn primary_inputs(&self) -> &[NetId] {
        &self.primary_inputs
    }

    pub fn primary_outputs(&self) -> &[NetId] {
        &self.primary_outputs
    }

    pub fn is_primary_input(&self, net: NetId) -> bool {
        self.is_input[net.index()]
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Gates in an order where every input is produced before it is consumed.
    pub fn topo_gates(&self) -> impl Iterator<Item = &Gate> + '_ {
        self.topo.iter().map(|&g| &self.gates[g as usize])
    }

    pub fn driver_of(&self, net: NetId) -> Option<&Gate> {
        let g = self.driver[net.index()];
        if g == u32::MAX {
            None
        } else {
            Some(&self.gates[g as usize])
        }
    }

    /// Transitive fan-in of `roots` as a bitset over net indices, including
    /// the roots themselves.
    pub fn fanin_cone(&self, roots: &[NetId]) -> Vec<u64> {
        let words = self.num_nets().div_ceil(64);
        let mut seen = vec![0u64; words];
        let mut stack: Vec<NetId> = Vec::new();
        for &r in roots {
            if set_bit(&mut seen, r.index()) {
                stack.push(r);
            }
        }
        while let Some(net) = stack.pop() {
            if let Some(gate) = self.driver_of(net) {
                for &inp in &gate.inputs {
                    if set_bit(&mut seen, inp.index()) {
                        stack.push(inp);
                    }
                }
            }
        }
        seen
    }

    /// Nets with a path to at least one primary output.
    pub fn observable_nets(&self) -> Vec<u64> {
        self.fanin_cone(&self.primary_outputs)
    }

    /// Serialize to bench text. Inputs and outputs keep their declaration
    /// order; gates are emitted in topological order.
    pub fn emit_bench(&self) -> String {
        let mut out = String::new();
        for &pi in &self.primary_inputs {
            out.push_str(&format!("INPUT({})\n", self.net_name(pi)));
        }
        for &po in &self.primary_outputs {
            out.push_str(&format!("OUTPUT({})\n", self.net_name(po)));
        }
        for gate in self.topo_gates() {
            let inputs: Vec<&str> = gate.inputs.iter().map(|&n| self.net_name(n)).collect();
            out.push_str(&format!(
                "{} = {}({})\n",
                self.net_name(gate.output),
                gate.kind.name(),
                inputs.join(", ")
            ));
        }
        out
    }

    /// Complete the test-time view of a scanned design: every flop Q must
    /// already be a pseudo-primary input; every flop D becomes a
    /// pseudo-primary output. Zero flops is the identity transform.
    pub fn full_scan_transform(mut self, flops: &[FlopPair]) -> Result<Netlist, NetlistError> {
        for flop in flops {
            if !self.is_primary_input(flop.q) {
                return Err(NetlistError::FlopNotInput {
                    net: self.net_name(flop.q).to_string(),
                });
            }
            if !self.primary_outputs.contains(&flop.d) {
                self.primary_outputs.push(flop.d);
            }
        }
        Ok(self)
    }
}

fn set_bit(bits: &mut [u64], index: usize) -> bool {
    let word = index / 64;
    let mask = 1u64 << (index % 64);
    let fresh = bits[word] & mask == 0;
    bits[word] |= mask;
    fresh
}

pub fn bit(bits: &[u64], index: usize) -> bool {
    bits[index / 64] >> (index % 64) & 1 == 1
}

/// Accumulates nets and gates, then validates into a [`Netlist`].
#[derive(Default)]
pub struct NetlistBuilder {
    names: Vec<String>,
    ids: HashMap<String, NetId>,
    gates: Vec<Gate>,
    primary_inputs: Vec<NetId>,
    primary_outputs: Vec<NetId>,
    declared_inputs: Vec<bool>,
    declared_outputs: Vec<bool>,
}

impl NetlistBuilder {
    /// Intern `name`, assigning the next dense id on first appearance.
    pub fn net(&mut self, name: &str) -> NetId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = NetId::from_index(self.names.len());
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        self.declared_inputs.push(false);
        self.declared_outputs.push(false);
        id
    }

    pub fn input(&mut self, name: &str) -> Result<NetId, NetlistError> {
        let id = self.net(name);
        if self.declared_inputs[id.index()] {
            return Err(NetlistError::DuplicateDeclaration {
                net: name.to_string(),
            });
        }
        self.declared_inputs[id.index()] = true;
        self.primary_inputs.push(id);
        Ok(id)
    }

    pub fn output(&mut self, name: &str) -> Result<NetId, NetlistError> {
        let id = self.net(name);
        if self.declared_outputs[id.index()] {
            return Err(NetlistError::DuplicateDeclaration {
                net: name.to_string(),
            });
        }
        self.declared_outputs[id.index()] = true;
        self.primary_outputs.push(id);
        Ok(id)
    }

    /// Declare an already-interned net as a primary output.
    pub fn declare_output(&mut self, net: NetId) -> Result<(), NetlistError> {
        if self.declared_outputs[net.index()] {
            return Err(NetlistError::DuplicateDeclaration {
                net: self.names[net.index()].clone(),
            });
        }
        self.declared_outputs[net.index()] = true;
        self.primary_outputs.push(net);
        Ok(())
    }

    /// Gates added so far, in insertion order.
    pub fn gates_so_far(&self) -> &[Gate] {
        &self.gates
    }

    /// Every interned net id, in first-appearance order.
    pub fn interned_nets(&self) -> Vec<NetId> {
        (0..self.names.len()).map(NetId::from_index).collect()
    }

    pub fn gate(
        &mut self,
        kind: GateKind,
        inputs: Vec<NetId>,
        output: NetId,
    ) -> Result<(), NetlistError> {
        let expected = kind.fixed_arity().unwrap_or(1);
        let ok = match kind.fixed_arity() {
            Some(n) => inputs.len() == n,
            None => !inputs.is_empty(),
        };
        if !ok {
            return Err(NetlistError::Arity {
                kind,
                expected,
                got: inputs.len(),
            });
        }
        self.gates.push(Gate {
            kind,
            inputs,
            output,
        });
        Ok(())
    }

    /// Validate and freeze. Checks single drivers, undriven nets, and
    /// acyclicity (Kahn ordering over gates).
    pub fn finish(self) -> Result<Netlist, NetlistError> {
        let num_nets = self.names.len();
        let mut driver = vec![u32::MAX; num_nets];
        let mut is_input = vec![false; num_nets];
        for &pi in &self.primary_inputs {
            is_input[pi.index()] = true;
        }
        for (gi, gate) in self.gates.iter().enumerate() {
            let slot = &mut driver[gate.output.index()];
            if is_input[gate.output.index()] {
                return Err(NetlistError::DrivenInput {
                    net: self.names[gate.output.index()].clone(),
                });
            }
            if *slot != u32::MAX {
                return Err(NetlistError::DuplicateDriver {
                    net: self.names[gate.output.index()].clone(),
                });
            }
            *slot = gi as u32;
        }
        for idx in 0..num_nets {
            if !is_input[idx] && driver[idx] == u32::MAX {
                return Err(NetlistError::Undriven {
                    net: self.names[idx].clone(),
                });
            }
        }

        // Kahn's algorithm over gates; a leftover gate proves a cycle.
        let mut pending: Vec<u32> = self
            .gates
            .iter()
            .map(|g| {
                g.inputs
                    .iter()
                    .filter(|i| !is_input[i.index()])
                    .count() as u32
            })
            .collect();
        let mut fanout: Vec<Vec<u32>> = vec![Vec::new(); num_nets];
        for (gi, gate) in self.gates.iter().enumerate() {
            for inp in &gate.inputs {
                if !is_input[inp.index()] {
                    fanout[inp.index()].push(gi as u32);
                }
            }
        }
        let mut ready: Vec<u32> = (0..self.gates.len() as u32)
            .filter(|&g| pending[g as usize] == 0)
            .collect();
        let mut topo = Vec::with_capacity(self.gates.len());
        let mut cursor = 0;
        while cursor < ready.len() {
            let gi = ready[cursor];
            cursor += 1;
            topo.push(gi);
            for &consumer in &fanout[self.gates[gi as usize].output.index()] {
                pending[consumer as usize] -= 1;
                if pending[consumer as usize] == 0 {
                    ready.push(consumer);
                }
            }
        }
        if topo.len() != self.gates.len() {
            let stuck = (0..self.gates.len())
                .find(|&g| pending[g] > 0)
                .expect("cycle implies a gate with pending inputs");
            return Err(NetlistError::Cycle {
                net: self.names[self.gates[stuck].output.index()].clone(),
            });
        }

        Ok(Netlist {
            names: self.names,
            ids: self.ids,
            gates: self.gates,
            driver,
            primary_inputs: self.primary_inputs,
            primary_outputs: self.primary_outputs,
            is_input,
            topo,
        })
    }
}

/// Parse a flop sidecar file: one `D Q` name pair per line, `#` comments.
pub fn parse_flop_list(text: &str, netlist: &Netlist) -> Result<Vec<FlopPair>, NetlistError> {
    let mut flops = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (d, q) = match (parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(q), None) => (d, q),
            _ => {
                return Err(NetlistError::Syntax {
                    line: 0,
                    msg: format!("expected `D Q` pair, got `{line}`"),
                })
            }
        };
        let d = netlist.net_id(d).ok_or_else(|| NetlistError::UnknownNet {
            name: d.to_string(),
        })?;
        let q = netlist.net_id(q).ok_or_else(|| NetlistError::UnknownNet {
            name: q.to_string(),
        })?;
        flops.push(FlopPair { d, q });
    }
    Ok(flops)
}

/// Serialize flop pairs for the sidecar format.
pub fn emit_flop_list(netlist: &Netlist, flops: &[FlopPair]) -> String {
    let mut out = String::new();
    for flop in flops {
        out.push_str(&format!(
            "{} {}\n",
            netlist.net_name(flop.d),
            netlist.net_name(flop.q)
        ));
    }
    out
}
