//! Gate-level netlist representation of the MAC unit.
//!
//! A [`Netlist`] is a combinational DAG of two-level-logic gates over
//! single-driver nets. Net ids follow a canonical layout so the JSON form
//! only needs port names and widths: input port bits come first (in port
//! declaration order, LSB first), then output port bits, then monitored
//! port bits, then internal nets.

mod builder;
mod generators;
mod library;

pub use builder::NetlistBuilder;
pub use generators::{
    adder_assignment, gen_adder, gen_mac, gen_multiplier, multiplier_assignment, MacNetlist,
    MacOutputs, ADDER_SUM_BITS, PRODUCT_BITS,
};
pub use library::{build_cell_library, cell_library_from_json, CellLibrary, CellParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NetId = u32;

/// Supported gate kinds. All gates have one output; INV and BUF take one
/// input, everything else two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "INV")]
    Inv,
    #[serde(rename = "BUF")]
    Buf,
    #[serde(rename = "AND2")]
    And2,
    #[serde(rename = "OR2")]
    Or2,
    #[serde(rename = "NAND2")]
    Nand2,
    #[serde(rename = "NOR2")]
    Nor2,
    #[serde(rename = "XOR2")]
    Xor2,
    #[serde(rename = "XNOR2")]
    Xnor2,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::Inv,
        GateKind::Buf,
        GateKind::And2,
        GateKind::Or2,
        GateKind::Nand2,
        GateKind::Nor2,
        GateKind::Xor2,
        GateKind::Xnor2,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Inv | GateKind::Buf => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Inv => "INV",
            GateKind::Buf => "BUF",
            GateKind::And2 => "AND2",
            GateKind::Or2 => "OR2",
            GateKind::Nand2 => "NAND2",
            GateKind::Nor2 => "NOR2",
            GateKind::Xor2 => "XOR2",
            GateKind::Xnor2 => "XNOR2",
        }
    }

    pub fn parse(s: &str) -> Option<GateKind> {
        GateKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Boolean function of the gate. `b` is ignored for unary kinds.
    #[inline]
    pub fn eval(self, a: bool, b: bool) -> bool {
        match self {
            GateKind::Inv => !a,
            GateKind::Buf => a,
            GateKind::And2 => a & b,
            GateKind::Or2 => a | b,
            GateKind::Nand2 => !(a & b),
            GateKind::Nor2 => !(a | b),
            GateKind::Xor2 => a ^ b,
            GateKind::Xnor2 => !(a ^ b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

/// A named bit vector, LSB first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub name: String,
    pub bits: Vec<NetId>,
}

impl Port {
    pub fn width(&self) -> usize {
        self.bits.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netlist {
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub monitored: Vec<Port>,
    pub gates: Vec<Gate>,
    pub net_count: u32,
    /// Gate indices in dependency order. Empty only when the gate graph is
    /// cyclic (which [`validate`] reports).
    pub topo_order: Vec<u32>,
}

impl Netlist {
    pub fn n_input_bits(&self) -> usize {
        self.inputs.iter().map(Port::width).sum()
    }

    pub fn input_port(&self, name: &str) -> Option<&Port> {
        self.inputs.iter().find(|p| p.name == name)
    }

    pub fn output_port(&self, name: &str) -> Option<&Port> {
        self.outputs.iter().find(|p| p.name == name)
    }

    pub fn monitored_port(&self, name: &str) -> Option<&Port> {
        self.monitored.iter().find(|p| p.name == name)
    }

    /// Builds a complete primary-input assignment from per-port values
    /// (LSB-first bit significance). Every input port must be listed.
    pub fn input_assignment(&self, values: &[(&str, u64)]) -> Result<Vec<bool>> {
        let mut bits = vec![false; self.n_input_bits()];
        let mut covered = 0usize;
        for &(name, value) in values {
            let port = self
                .input_port(name)
                .ok_or_else(|| Error::Input(format!("no input port `{name}`")))?;
            if port.width() < 64 && value >> port.width() != 0 {
                return Err(Error::Input(format!(
                    "value {value} does not fit {}-bit port `{name}`",
                    port.width()
                )));
            }
            for (i, &net) in port.bits.iter().enumerate() {
                bits[net as usize] = (value >> i) & 1 == 1;
            }
            covered += port.width();
        }
        if covered != bits.len() {
            return Err(Error::Input(format!(
                "assignment covers {covered} of {} input bits",
                bits.len()
            )));
        }
        Ok(bits)
    }

    /// Reads a port value (LSB first) out of a full net-value vector as
    /// produced by the engine.
    pub fn read_port(port: &Port, values: &[bool]) -> u64 {
        port.bits
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &net)| acc | ((values[net as usize] as u64) << i))
    }

    /// Recomputes the topological gate order with Kahn's algorithm.
    /// Returns `None` when the gate graph has a combinational cycle.
    pub fn compute_topo_order(&self) -> Option<Vec<u32>> {
        let n_inputs = self.n_input_bits() as u32;
        let mut driver: Vec<Option<u32>> = vec![None; self.net_count as usize];
        for (gi, g) in self.gates.iter().enumerate() {
            driver[g.output as usize] = Some(gi as u32);
        }
        // Pending input-net count per gate, counting only gate-driven nets.
        let mut pending: Vec<u32> = self
            .gates
            .iter()
            .map(|g| {
                g.inputs
                    .iter()
                    .filter(|&&n| n >= n_inputs && driver[n as usize].is_some())
                    .count() as u32
            })
            .collect();
        let mut fanout: Vec<Vec<u32>> = vec![Vec::new(); self.net_count as usize];
        for (gi, g) in self.gates.iter().enumerate() {
            for &n in &g.inputs {
                if n >= n_inputs && driver[n as usize].is_some() {
                    fanout[n as usize].push(gi as u32);
                }
            }
        }
        let mut ready: std::collections::VecDeque<u32> = (0..self.gates.len() as u32)
            .filter(|&gi| pending[gi as usize] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.gates.len());
        while let Some(gi) = ready.pop_front() {
            order.push(gi);
            for &consumer in &fanout[self.gates[gi as usize].output as usize] {
                pending[consumer as usize] -= 1;
                if pending[consumer as usize] == 0 {
                    ready.push_back(consumer);
                }
            }
        }
        (order.len() == self.gates.len()).then_some(order)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetlistJson::from(self)).expect("netlist serializes")
    }

    pub fn from_json(text: &str) -> Result<Netlist> {
        let raw: NetlistJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("netlist: {e}")))?;
        raw.into_netlist()
    }
}

/// One violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Net has more than one driver (gate or primary input).
    MultipleDrivers { net: NetId },
    /// Net is referenced (gate input, output or monitored port) but has no
    /// driver and is not a primary input.
    Dangling { net: NetId },
    /// Gate fan-in does not match its kind.
    BadArity { gate: usize, kind: GateKind, found: usize },
    /// Gate references a net id at or beyond `net_count`.
    NetOutOfRange { gate: usize, net: NetId },
    /// The gate graph contains a combinational cycle.
    Cycle { unordered_gates: usize },
    /// Stored topological order is missing, incomplete or inconsistent.
    BadTopoOrder,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::MultipleDrivers { net } => write!(f, "net {net} has multiple drivers"),
            Violation::Dangling { net } => write!(f, "net {net} has no driver"),
            Violation::BadArity { gate, kind, found } => {
                write!(f, "gate {gate} ({}) has {found} inputs", kind.name())
            }
            Violation::NetOutOfRange { gate, net } => {
                write!(f, "gate {gate} references out-of-range net {net}")
            }
            Violation::Cycle { unordered_gates } => {
                write!(f, "combinational cycle ({unordered_gates} gates unorderable)")
            }
            Violation::BadTopoOrder => write!(f, "stored topological order is invalid"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks acyclicity, single-driver, arity, dangling-net and stored-order
/// invariants. The report is empty iff all hold.
pub fn validate(n: &Netlist) -> ValidationReport {
    let mut v = Vec::new();
    let n_inputs = n.n_input_bits() as u32;
    let nets = n.net_count as usize;

    let mut driver_count = vec![0u32; nets];
    for i in 0..n_inputs.min(n.net_count) {
        driver_count[i as usize] += 1;
    }
    for (gi, g) in n.gates.iter().enumerate() {
        if g.inputs.len() != g.kind.arity() {
            v.push(Violation::BadArity { gate: gi, kind: g.kind, found: g.inputs.len() });
        }
        for &net in g.inputs.iter().chain(std::iter::once(&g.output)) {
            if net >= n.net_count {
                v.push(Violation::NetOutOfRange { gate: gi, net });
            }
        }
        if g.output < n.net_count {
            driver_count[g.output as usize] += 1;
        }
    }
    for (net, &count) in driver_count.iter().enumerate() {
        if count > 1 {
            v.push(Violation::MultipleDrivers { net: net as NetId });
        }
    }

    // A net is referenced if any gate reads it or a port exposes it.
    let mut referenced = vec![false; nets];
    for g in &n.gates {
        for &net in &g.inputs {
            if (net as usize) < nets {
                referenced[net as usize] = true;
            }
        }
    }
    for port in n.outputs.iter().chain(n.monitored.iter()) {
        for &net in &port.bits {
            if (net as usize) < nets {
                referenced[net as usize] = true;
            }
        }
    }
    for net in 0..nets {
        if referenced[net] && driver_count[net] == 0 {
            v.push(Violation::Dangling { net: net as NetId });
        }
    }

    match n.compute_topo_order() {
        None => v.push(Violation::Cycle {
            unordered_gates: n.gates.len(),
        }),
        Some(_) => {
            if !topo_order_is_valid(n) {
                v.push(Violation::BadTopoOrder);
            }
        }
    }

    ValidationReport { violations: v }
}

fn topo_order_is_valid(n: &Netlist) -> bool {
    if n.topo_order.len() != n.gates.len() {
        return false;
    }
    let n_inputs = n.n_input_bits() as u32;
    let mut available = vec![false; n.net_count as usize];
    for i in 0..n_inputs.min(n.net_count) {
        available[i as usize] = true;
    }
    let mut seen = vec![false; n.gates.len()];
    let mut driver: Vec<Option<u32>> = vec![None; n.net_count as usize];
    for (gi, g) in n.gates.iter().enumerate() {
        driver[g.output as usize] = Some(gi as u32);
    }
    for &gi in &n.topo_order {
        let gi = gi as usize;
        if gi >= n.gates.len() || seen[gi] {
            return false;
        }
        seen[gi] = true;
        let g = &n.gates[gi];
        for &net in &g.inputs {
            // Inputs must be primary inputs, already-produced gate outputs,
            // or undriven nets (reported separately as dangling).
            if !available[net as usize] && driver[net as usize].is_some() {
                return false;
            }
        }
        available[g.output as usize] = true;
    }
    true
}

// --- JSON schema -----------------------------------------------------------
//
// {inputs:[{name,width}], outputs:[{name,width}], monitored:[{name,width}],
//  gates:[{id,kind,in:[netid],out:netid}]}
//
// Port bit net ids are implied by the canonical layout.

#[derive(Serialize, Deserialize)]
struct PortJson {
    name: String,
    width: usize,
}

#[derive(Serialize, Deserialize)]
struct GateJson {
    id: usize,
    kind: GateKind,
    #[serde(rename = "in")]
    inputs: Vec<NetId>,
    #[serde(rename = "out")]
    output: NetId,
}

#[derive(Serialize, Deserialize)]
struct NetlistJson {
    inputs: Vec<PortJson>,
    outputs: Vec<PortJson>,
    monitored: Vec<PortJson>,
    gates: Vec<GateJson>,
}

impl From<&Netlist> for NetlistJson {
    fn from(n: &Netlist) -> Self {
        let port = |p: &Port| PortJson { name: p.name.clone(), width: p.width() };
        NetlistJson {
            inputs: n.inputs.iter().map(port).collect(),
            outputs: n.outputs.iter().map(port).collect(),
            monitored: n.monitored.iter().map(port).collect(),
            gates: n
                .gates
                .iter()
                .enumerate()
                .map(|(id, g)| GateJson {
                    id,
                    kind: g.kind,
                    inputs: g.inputs.clone(),
                    output: g.output,
                })
                .collect(),
        }
    }
}

impl NetlistJson {
    fn into_netlist(self) -> Result<Netlist> {
        let mut next: NetId = 0;
        let mut take = |ports: Vec<PortJson>| -> Vec<Port> {
            ports
                .into_iter()
                .map(|p| {
                    let bits = (next..next + p.width as NetId).collect();
                    next += p.width as NetId;
                    Port { name: p.name, bits }
                })
                .collect()
        };
        let inputs = take(self.inputs);
        let outputs = take(self.outputs);
        let monitored = take(self.monitored);
        let mut net_count = next;
        let gates: Vec<Gate> = self
            .gates
            .into_iter()
            .map(|g| Gate { kind: g.kind, inputs: g.inputs, output: g.output })
            .collect();
        for g in &gates {
            for &n in g.inputs.iter().chain(std::iter::once(&g.output)) {
                net_count = net_count.max(n + 1);
            }
        }
        let mut netlist = Netlist {
            inputs,
            outputs,
            monitored,
            gates,
            net_count,
            topo_order: Vec::new(),
        };
        netlist.topo_order = netlist.compute_topo_order().unwrap_or_default();
        Ok(netlist)
    }
}

/// Interprets the low `bits` of `value` as a two's-complement signed number.
pub fn to_signed(value: u64, bits: u32) -> i64 {
    debug_assert!(bits >= 1 && bits <= 63);
    let mask = (1u64 << bits) - 1;
    let v = value & mask;
    if v >> (bits - 1) & 1 == 1 {
        v as i64 - (1i64 << bits)
    } else {
        v as i64
    }
}

/// Two's-complement encoding of `value` into `bits` bits.
pub fn from_signed(value: i64, bits: u32) -> u64 {
    debug_assert!(bits >= 1 && bits <= 63);
    (value as u64) & ((1u64 << bits) - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_codec_roundtrip() {
        for v in [-32385i64, -1, 0, 1, 15, 32385] {
            assert_eq!(to_signed(from_signed(v, 16), 16), v);
        }
        assert_eq!(from_signed(-1, 22), (1 << 22) - 1);
        assert_eq!(to_signed((1 << 22) - 1, 22), -1);
    }

    #[test]
    fn validate_reports_multiple_drivers() {
        // Two inverters driving the same net.
        let n = Netlist {
            inputs: vec![Port { name: "a".into(), bits: vec![0, 1] }],
            outputs: vec![Port { name: "y".into(), bits: vec![2] }],
            monitored: vec![],
            gates: vec![
                Gate { kind: GateKind::Inv, inputs: vec![0], output: 2 },
                Gate { kind: GateKind::Inv, inputs: vec![1], output: 2 },
            ],
            net_count: 3,
            topo_order: vec![0, 1],
        };
        let report = validate(&n);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MultipleDrivers { net: 2 })));
    }

    #[test]
    fn validate_reports_cycle() {
        // g0 reads g1's output and vice versa.
        let n = Netlist {
            inputs: vec![Port { name: "a".into(), bits: vec![0] }],
            outputs: vec![Port { name: "y".into(), bits: vec![1] }],
            monitored: vec![],
            gates: vec![
                Gate { kind: GateKind::And2, inputs: vec![0, 2], output: 1 },
                Gate { kind: GateKind::Inv, inputs: vec![1], output: 2 },
            ],
            net_count: 3,
            topo_order: vec![],
        };
        let report = validate(&n);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn validate_reports_arity_and_dangling() {
        let n = Netlist {
            inputs: vec![Port { name: "a".into(), bits: vec![0] }],
            outputs: vec![Port { name: "y".into(), bits: vec![1] }],
            monitored: vec![],
            gates: vec![Gate { kind: GateKind::And2, inputs: vec![0], output: 1 }],
            net_count: 3,
            topo_order: vec![0],
        };
        let report = validate(&n);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BadArity { gate: 0, .. })));
        // Net 2 exists but is never referenced: not a violation.
        assert!(!report.violations.iter().any(|v| matches!(v, Violation::Dangling { net: 2 })));
    }
}
