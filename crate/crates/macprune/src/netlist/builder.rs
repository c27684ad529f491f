//! Programmatic netlist construction.
//!
//! The builder hands out temporary net ids; [`NetlistBuilder::finish`]
//! remaps them into the canonical layout (input bits, output bits,
//! monitored bits, internal nets) and computes the topological gate order.

use crate::error::{Error, Result};
use super::{Gate, GateKind, NetId, Netlist, Port};

#[derive(Debug, Clone, Copy)]
pub struct OutputHandle(usize);

#[derive(Debug, Clone, Copy)]
pub struct MonitorHandle(usize);

#[derive(Debug, Default)]
pub struct NetlistBuilder {
    input_ports: Vec<(String, Vec<NetId>)>,
    output_ports: Vec<(String, Vec<Option<NetId>>)>,
    monitor_ports: Vec<(String, Vec<Option<NetId>>)>,
    gates: Vec<Gate>,
    next_net: NetId,
}

impl NetlistBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an input port and returns its bit nets, LSB first.
    pub fn add_input(&mut self, name: &str, width: usize) -> Vec<NetId> {
        let bits: Vec<NetId> = (self.next_net..self.next_net + width as NetId).collect();
        self.next_net += width as NetId;
        self.input_ports.push((name.to_string(), bits.clone()));
        bits
    }

    pub fn declare_output(&mut self, name: &str, width: usize) -> OutputHandle {
        self.output_ports.push((name.to_string(), vec![None; width]));
        OutputHandle(self.output_ports.len() - 1)
    }

    pub fn declare_monitored(&mut self, name: &str, width: usize) -> MonitorHandle {
        self.monitor_ports.push((name.to_string(), vec![None; width]));
        MonitorHandle(self.monitor_ports.len() - 1)
    }

    /// Binds an output port bit to a gate-driven net.
    pub fn bind_output(&mut self, handle: OutputHandle, bit: usize, net: NetId) {
        self.output_ports[handle.0].1[bit] = Some(net);
    }

    pub fn bind_monitored(&mut self, handle: MonitorHandle, bit: usize, net: NetId) {
        self.monitor_ports[handle.0].1[bit] = Some(net);
    }

    fn emit(&mut self, kind: GateKind, inputs: Vec<NetId>) -> NetId {
        let output = self.next_net;
        self.next_net += 1;
        self.gates.push(Gate { kind, inputs, output });
        output
    }

    pub fn unary(&mut self, kind: GateKind, a: NetId) -> NetId {
        debug_assert_eq!(kind.arity(), 1);
        self.emit(kind, vec![a])
    }

    pub fn gate(&mut self, kind: GateKind, a: NetId, b: NetId) -> NetId {
        debug_assert_eq!(kind.arity(), 2);
        self.emit(kind, vec![a, b])
    }

    pub fn inv(&mut self, a: NetId) -> NetId {
        self.unary(GateKind::Inv, a)
    }

    pub fn and2(&mut self, a: NetId, b: NetId) -> NetId {
        self.gate(GateKind::And2, a, b)
    }

    pub fn or2(&mut self, a: NetId, b: NetId) -> NetId {
        self.gate(GateKind::Or2, a, b)
    }

    pub fn nand2(&mut self, a: NetId, b: NetId) -> NetId {
        self.gate(GateKind::Nand2, a, b)
    }

    pub fn xor2(&mut self, a: NetId, b: NetId) -> NetId {
        self.gate(GateKind::Xor2, a, b)
    }

    pub fn xnor2(&mut self, a: NetId, b: NetId) -> NetId {
        self.gate(GateKind::Xnor2, a, b)
    }

    /// Finalizes the netlist: checks bindings, remaps nets into the
    /// canonical layout and computes the topological order.
    pub fn finish(self) -> Result<Netlist> {
        let n_inputs: usize = self.input_ports.iter().map(|(_, b)| b.len()).sum();
        let total_temp = self.next_net as usize;
        let mut gate_of: Vec<Option<u32>> = vec![None; total_temp];
        for (gi, g) in self.gates.iter().enumerate() {
            gate_of[g.output as usize] = Some(gi as u32);
        }

        const UNASSIGNED: NetId = NetId::MAX;
        let mut map: Vec<NetId> = vec![UNASSIGNED; total_temp];
        let mut next: NetId = 0;
        let mut assign = |map: &mut Vec<NetId>, temp: NetId| -> Result<()> {
            if map[temp as usize] != UNASSIGNED {
                return Err(Error::Structure(format!(
                    "net {temp} bound to more than one port bit"
                )));
            }
            map[temp as usize] = next;
            next += 1;
            Ok(())
        };

        for (_, bits) in &self.input_ports {
            for &b in bits {
                assign(&mut map, b)?;
            }
        }
        let mut resolve_bound = |map: &mut Vec<NetId>,
                                 ports: &[(String, Vec<Option<NetId>>)]|
         -> Result<()> {
            for (name, bits) in ports {
                for (i, bit) in bits.iter().enumerate() {
                    let temp = bit.ok_or_else(|| {
                        Error::Structure(format!("port `{name}` bit {i} never bound"))
                    })?;
                    if gate_of[temp as usize].is_none() {
                        return Err(Error::Structure(format!(
                            "port `{name}` bit {i} must be driven by a gate (insert a BUF)"
                        )));
                    }
                    assign(map, temp)?;
                }
            }
            Ok(())
        };
        resolve_bound(&mut map, &self.output_ports)?;
        resolve_bound(&mut map, &self.monitor_ports)?;
        for temp in 0..total_temp as NetId {
            if map[temp as usize] == UNASSIGNED {
                map[temp as usize] = next;
                next += 1;
            }
        }

        let remap_port = |(name, bits): &(String, Vec<NetId>)| Port {
            name: name.clone(),
            bits: bits.iter().map(|&b| map[b as usize]).collect(),
        };
        let remap_bound = |(name, bits): &(String, Vec<Option<NetId>>)| Port {
            name: name.clone(),
            bits: bits.iter().map(|b| map[b.unwrap() as usize]).collect(),
        };

        let gates: Vec<Gate> = self
            .gates
            .iter()
            .map(|g| Gate {
                kind: g.kind,
                inputs: g.inputs.iter().map(|&n| map[n as usize]).collect(),
                output: map[g.output as usize],
            })
            .collect();

        let mut netlist = Netlist {
            inputs: self.input_ports.iter().map(remap_port).collect(),
            outputs: self.output_ports.iter().map(remap_bound).collect(),
            monitored: self.monitor_ports.iter().map(remap_bound).collect(),
            gates,
            net_count: next,
            topo_order: Vec::new(),
        };
        debug_assert_eq!(netlist.n_input_bits(), n_inputs);
        netlist.topo_order = netlist
            .compute_topo_order()
            .ok_or_else(|| Error::Structure("combinational cycle in built netlist".into()))?;
        Ok(netlist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::validate;

    #[test]
    fn canonical_layout_and_topo() {
        let mut b = NetlistBuilder::new();
        let a = b.add_input("a", 2);
        let y = b.declare_output("y", 1);
        let m = b.declare_monitored("m", 1);
        let n1 = b.and2(a[0], a[1]);
        let n2 = b.inv(n1);
        b.bind_output(y, 0, n2);
        b.bind_monitored(m, 0, n1);
        let n = b.finish().unwrap();

        // inputs 0..2, output bit 2, monitored bit 3.
        assert_eq!(n.inputs[0].bits, vec![0, 1]);
        assert_eq!(n.outputs[0].bits, vec![2]);
        assert_eq!(n.monitored[0].bits, vec![3]);
        assert_eq!(n.net_count, 4);
        assert!(validate(&n).is_empty());
    }

    #[test]
    fn unbound_output_is_rejected() {
        let mut b = NetlistBuilder::new();
        b.add_input("a", 1);
        b.declare_output("y", 1);
        assert!(b.finish().is_err());
    }

    #[test]
    fn json_roundtrip_preserves_netlist() {
        let mut b = NetlistBuilder::new();
        let a = b.add_input("a", 2);
        let y = b.declare_output("y", 2);
        let s = b.xor2(a[0], a[1]);
        let c = b.and2(a[0], a[1]);
        b.bind_output(y, 0, s);
        b.bind_output(y, 1, c);
        let n = b.finish().unwrap();
        let restored = Netlist::from_json(&n.to_json()).unwrap();
        assert_eq!(n, restored);
    }
}
