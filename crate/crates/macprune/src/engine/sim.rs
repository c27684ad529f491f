//! Zero-delay settling and transport-delay event simulation.
//!
//! Transport semantics: every effective input change at a gate schedules
//! an output event `delay` later whenever the recomputed output differs
//! from the value the gate last scheduled, so glitches propagate and are
//! counted as real events. Simultaneous events are processed as one batch
//! per timestamp (net updates first, then one recompute per affected
//! gate), which makes traces independent of queue tie-processing order;
//! remaining ties are broken by net id.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::netlist::{CellLibrary, GateKind, NetId, Netlist};

/// Result of one two-vector simulation.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionTrace {
    /// Time of the last event per net, in ps. 0 if the net never toggled
    /// after t=0 (primary-input toggles happen at t=0).
    pub last_event_time: Vec<u64>,
    /// Number of toggles per net.
    pub event_count: Vec<u32>,
    /// Sum over gates of output toggles times the gate's switch energy.
    pub total_switch_energy_fj: f64,
    /// Net values after the simulation settles; equals `settle(v2)`.
    pub final_values: Vec<bool>,
}

/// Zero-delay functional evaluation in topological order.
pub fn settle(n: &Netlist, inputs: &[bool]) -> Result<Vec<bool>> {
    if inputs.len() != n.n_input_bits() {
        return Err(Error::Input(format!(
            "assignment has {} bits, netlist has {} input bits",
            inputs.len(),
            n.n_input_bits()
        )));
    }
    if n.topo_order.len() != n.gates.len() {
        return Err(Error::Structure("netlist has no valid topological order".into()));
    }
    let mut values = vec![false; n.net_count as usize];
    values[..inputs.len()].copy_from_slice(inputs);
    for &gi in &n.topo_order {
        let g = &n.gates[gi as usize];
        let a = values[g.inputs[0] as usize];
        let b = g.inputs.get(1).map_or(false, |&i| values[i as usize]);
        values[g.output as usize] = g.kind.eval(a, b);
    }
    Ok(values)
}

struct CompiledGate {
    /// 4-entry truth table indexed by `in0 | in1 << 1`.
    table: u8,
    in0: NetId,
    in1: NetId, // == in0 for unary gates
    output: NetId,
    delay_ps: u64,
}

impl CompiledGate {
    #[inline]
    fn eval(&self, values: &[bool]) -> bool {
        let idx = values[self.in0 as usize] as u8 | (values[self.in1 as usize] as u8) << 1;
        self.table >> idx & 1 == 1
    }
}

fn truth_table(kind: GateKind) -> u8 {
    let mut t = 0u8;
    for idx in 0..4u8 {
        if kind.eval(idx & 1 == 1, idx >> 1 == 1) {
            t |= 1 << idx;
        }
    }
    t
}

/// Reusable event simulator over one immutable netlist and library.
///
/// Holds all mutable simulation state privately, so many instances can run
/// in parallel against shared netlists.
pub struct Simulator<'a> {
    netlist: &'a Netlist,
    gates: Vec<CompiledGate>,
    /// CSR fanout: gate indices consuming each net.
    fan_off: Vec<u32>,
    fan: Vec<u32>,
    /// Energy charged per toggle of each net (its driver's switch energy).
    net_energy: Vec<f64>,
    n_inputs: usize,

    values: Vec<bool>,
    last_scheduled: Vec<bool>,
    /// Ring of pending events keyed by time modulo the wheel size; gate
    /// delays are bounded by `wheel.len() - 1`, so one revolution always
    /// covers every schedulable horizon.
    wheel: Vec<Vec<(NetId, bool)>>,
    pending: usize,
    last_event: Vec<u64>,
    event_count: Vec<u32>,
    touched: Vec<NetId>,
    batch: Vec<(NetId, bool)>,
    affected: Vec<u32>,
    affected_mark: Vec<u32>,
    epoch: u32,
    energy_fj: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(netlist: &'a Netlist, lib: &CellLibrary) -> Result<Self> {
        if netlist.topo_order.len() != netlist.gates.len() {
            return Err(Error::Structure("netlist has no valid topological order".into()));
        }
        let nets = netlist.net_count as usize;
        let gates: Vec<CompiledGate> = netlist
            .gates
            .iter()
            .map(|g| CompiledGate {
                table: truth_table(g.kind),
                in0: g.inputs[0],
                in1: *g.inputs.get(1).unwrap_or(&g.inputs[0]),
                output: g.output,
                delay_ps: lib.delay_ps(g.kind) as u64,
            })
            .collect();

        let mut counts = vec![0u32; nets];
        for g in &netlist.gates {
            for &i in &g.inputs {
                counts[i as usize] += 1;
            }
        }
        let mut fan_off = vec![0u32; nets + 1];
        for i in 0..nets {
            fan_off[i + 1] = fan_off[i] + counts[i];
        }
        let mut fan = vec![0u32; fan_off[nets] as usize];
        let mut cursor = fan_off.clone();
        for (gi, g) in netlist.gates.iter().enumerate() {
            for &i in &g.inputs {
                fan[cursor[i as usize] as usize] = gi as u32;
                cursor[i as usize] += 1;
            }
        }

        let mut net_energy = vec![0.0f64; nets];
        for g in &netlist.gates {
            net_energy[g.output as usize] = lib.params(g.kind).switch_energy_fj;
        }

        let max_delay = gates.iter().map(|g| g.delay_ps).max().unwrap_or(0) as usize;
        Ok(Simulator {
            netlist,
            gates,
            fan_off,
            fan,
            net_energy,
            n_inputs: netlist.n_input_bits(),
            values: vec![false; nets],
            last_scheduled: Vec::new(),
            wheel: vec![Vec::new(); max_delay + 1],
            pending: 0,
            last_event: vec![0; nets],
            event_count: vec![0; nets],
            touched: Vec::new(),
            batch: Vec::new(),
            affected: Vec::new(),
            affected_mark: vec![0; netlist.gates.len()],
            epoch: 0,
            energy_fj: 0.0,
        })
    }

    /// Settles the circuit under `v1`, applies `v2` at t=0 and propagates
    /// events to quiescence. Results stay readable until the next run.
    pub fn run(&mut self, v1: &[bool], v2: &[bool]) -> Result<()> {
        if v1.len() != self.n_inputs || v2.len() != self.n_inputs {
            return Err(Error::Input(format!(
                "assignments must cover all {} input bits",
                self.n_inputs
            )));
        }
        for &net in &self.touched {
            self.last_event[net as usize] = 0;
            self.event_count[net as usize] = 0;
        }
        self.touched.clear();
        for slot in &mut self.wheel {
            slot.clear();
        }
        self.pending = 0;
        self.energy_fj = 0.0;

        // Zero-delay settle under v1.
        self.values[..self.n_inputs].copy_from_slice(v1);
        for &gi in &self.netlist.topo_order {
            let g = &self.gates[gi as usize];
            self.values[g.output as usize] = g.eval(&self.values);
        }
        self.last_scheduled.clear();
        self.last_scheduled
            .extend(self.gates.iter().map(|g| self.values[g.output as usize]));

        let wheel_len = self.wheel.len() as u64;
        for (bit, (&old, &new)) in v1.iter().zip(v2).enumerate() {
            if old != new {
                self.wheel[0].push((bit as NetId, new));
                self.pending += 1;
            }
        }

        let mut now = 0u64;
        while self.pending > 0 {
            // Advance to the next populated timestamp; every pending
            // event lies within one wheel revolution of `now`.
            while self.wheel[(now % wheel_len) as usize].is_empty() {
                now += 1;
            }
            let slot = (now % wheel_len) as usize;
            self.batch.clear();
            self.batch.append(&mut self.wheel[slot]);
            self.pending -= self.batch.len();
            // Queue ties resolve by net id.
            self.batch.sort_unstable_by_key(|&(net, _)| net);

            self.epoch += 1;
            self.affected.clear();
            for i in 0..self.batch.len() {
                let (net, value) = self.batch[i];
                debug_assert_ne!(self.values[net as usize], value, "no-op event");
                self.values[net as usize] = value;
                if self.event_count[net as usize] == 0 {
                    self.touched.push(net);
                }
                self.event_count[net as usize] += 1;
                self.last_event[net as usize] = now;
                self.energy_fj += self.net_energy[net as usize];
                let (lo, hi) = (self.fan_off[net as usize], self.fan_off[net as usize + 1]);
                for &gi in &self.fan[lo as usize..hi as usize] {
                    if self.affected_mark[gi as usize] != self.epoch {
                        self.affected_mark[gi as usize] = self.epoch;
                        self.affected.push(gi);
                    }
                }
            }
            for i in 0..self.affected.len() {
                let gi = self.affected[i] as usize;
                let g = &self.gates[gi];
                let out = g.eval(&self.values);
                if out != self.last_scheduled[gi] {
                    self.last_scheduled[gi] = out;
                    let at = ((now + g.delay_ps) % wheel_len) as usize;
                    self.wheel[at].push((g.output, out));
                    self.pending += 1;
                }
            }
        }
        Ok(())
    }

    pub fn energy_fj(&self) -> f64 {
        self.energy_fj
    }

    pub fn last_event_time(&self, net: NetId) -> u64 {
        self.last_event[net as usize]
    }

    pub fn event_count(&self, net: NetId) -> u32 {
        self.event_count[net as usize]
    }

    pub fn value(&self, net: NetId) -> bool {
        self.values[net as usize]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// Materializes the current run into an owned trace.
    pub fn trace(&self) -> TransitionTrace {
        TransitionTrace {
            last_event_time: self.last_event.clone(),
            event_count: self.event_count.clone(),
            total_switch_energy_fj: self.energy_fj,
            final_values: self.values.clone(),
        }
    }
}

/// One-shot convenience wrapper around [`Simulator`].
pub fn simulate_transition(
    n: &Netlist,
    lib: &CellLibrary,
    v1: &[bool],
    v2: &[bool],
) -> Result<TransitionTrace> {
    let mut sim = Simulator::new(n, lib)?;
    sim.run(v1, v2)?;
    Ok(sim.trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{gen_mac, gen_multiplier, multiplier_assignment, NetlistBuilder};

    fn inv_chain(len: usize) -> Netlist {
        let mut b = NetlistBuilder::new();
        let a = b.add_input("a", 1);
        let y = b.declare_output("y", 1);
        let mut net = a[0];
        for _ in 0..len {
            net = b.inv(net);
        }
        b.bind_output(y, 0, net);
        b.finish().unwrap()
    }

    #[test]
    fn settle_inverter_chain() {
        let n = inv_chain(2);
        let values = settle(&n, &[true]).unwrap();
        assert!(values[n.outputs[0].bits[0] as usize]);
    }

    #[test]
    fn settle_missing_input_is_error() {
        let n = inv_chain(2);
        assert!(settle(&n, &[]).is_err());
    }

    #[test]
    fn no_transition_means_no_events() {
        let n = gen_multiplier();
        let lib = CellLibrary::default();
        let v = multiplier_assignment(&n, 37, 200).unwrap();
        let trace = simulate_transition(&n, &lib, &v, &v).unwrap();
        assert_eq!(trace.total_switch_energy_fj, 0.0);
        assert!(trace.event_count.iter().all(|&c| c == 0));
        assert!(trace.last_event_time.iter().all(|&t| t == 0));
    }

    #[test]
    fn single_inverter_event() {
        let n = inv_chain(1);
        let lib = CellLibrary::default();
        let trace = simulate_transition(&n, &lib, &[false], &[true]).unwrap();
        let out = n.outputs[0].bits[0];
        assert_eq!(trace.event_count[out as usize], 1);
        assert_eq!(trace.last_event_time[out as usize], 5);
        let e_inv = lib.params(GateKind::Inv).switch_energy_fj;
        assert!((trace.total_switch_energy_fj - e_inv).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_per_gate_recount() {
        let mac = gen_mac();
        let lib = CellLibrary::default();
        let v1 = mac.assignment(-77, 13, 0x155555);
        let v2 = mac.assignment(-77, 214, 0x2AAAAA);
        let trace = simulate_transition(&mac.netlist, &lib, &v1, &v2).unwrap();
        let recount: f64 = mac
            .netlist
            .gates
            .iter()
            .map(|g| {
                trace.event_count[g.output as usize] as f64
                    * lib.params(g.kind).switch_energy_fj
            })
            .sum();
        assert!((trace.total_switch_energy_fj - recount).abs() < 1e-9);
        assert!(trace.total_switch_energy_fj > 0.0);
    }

    #[test]
    fn final_values_equal_settle_v2() {
        let mac = gen_mac();
        let lib = CellLibrary::default();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut sim = Simulator::new(&mac.netlist, &lib).unwrap();
        for _ in 0..200 {
            let v1 = mac.assignment(
                rng.random_range(-127..=127i32) as i8,
                rng.random(),
                rng.random_range(0..1 << 22),
            );
            let v2 = mac.assignment(
                rng.random_range(-127..=127i32) as i8,
                rng.random(),
                rng.random_range(0..1 << 22),
            );
            sim.run(&v1, &v2).unwrap();
            assert_eq!(sim.values(), settle(&mac.netlist, &v2).unwrap().as_slice());
        }
    }

    #[test]
    fn trace_is_deterministic() {
        let mac = gen_mac();
        let lib = CellLibrary::default();
        let v1 = mac.assignment(64, 1, 99);
        let v2 = mac.assignment(64, 2, 100);
        let a = simulate_transition(&mac.netlist, &lib, &v1, &v2).unwrap();
        let b = simulate_transition(&mac.netlist, &lib, &v1, &v2).unwrap();
        assert_eq!(a.event_count, b.event_count);
        assert_eq!(a.last_event_time, b.last_event_time);
        assert_eq!(a.total_switch_energy_fj, b.total_switch_energy_fj);
    }
}
