//! Per-weight power and delay profiles.
//!
//! Power: the weight input is pinned and the shared combined-transition
//! sample list replays through the full MAC; average dynamic power is the
//! switched energy over n clock periods. Delay: the weight input of the
//! standalone multiplier is pinned and all 65,536 activation transitions
//! are simulated; each product-bit arrival joins the static adder bounds
//! through the combination rule.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{combine_mac_delay, Simulator};
use crate::error::{Error, Result};
use crate::netlist::{from_signed, CellLibrary, MacNetlist, Netlist};

use super::CombinedTransition;

/// Average dynamic power per weight value plus the MAC's leakage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    /// Index `w + 127` for weight values -127..=127, in µW; `None` for
    /// weights left out of the characterization.
    pub powers_uw: Vec<Option<f64>>,
    /// Per-MAC leakage in µW (sum of gate leakages).
    pub leakage_uw: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub clock_period_ps: u32,
}

impl PowerProfile {
    /// Profile over all 255 weights from a closed-form power function
    /// (test and modeling helper).
    pub fn from_fn(f: impl Fn(i8) -> f64, leakage_uw: f64, clock_period_ps: u32) -> PowerProfile {
        PowerProfile {
            powers_uw: (-127..=127).map(|w| Some(f(w as i8))).collect(),
            leakage_uw,
            sample_count: 0,
            seed: 0,
            clock_period_ps,
        }
    }

    pub fn power(&self, w: i8) -> Option<f64> {
        if w == i8::MIN {
            return None;
        }
        self.powers_uw.get((w as i32 + 127) as usize).copied().flatten()
    }

    /// Characterized (weight, power) pairs in weight order.
    pub fn weights(&self) -> impl Iterator<Item = (i8, f64)> + '_ {
        self.powers_uw
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| ((i as i32 - 127) as i8, p)))
    }

    pub fn n_characterized(&self) -> usize {
        self.powers_uw.iter().filter(|p| p.is_some()).count()
    }

    pub fn min_weight(&self) -> (i8, f64) {
        self.weights()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("profile non-empty")
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "weight,power_uW")?;
        for (weight, power) in self.weights() {
            writeln!(w, "{weight},{power}")?;
        }
        Ok(())
    }
}

/// Characterizes every weight in `weights` against one shared sample
/// list. Parallel over weights; the result does not depend on the worker
/// count.
pub fn power_profile_all(
    mac: &MacNetlist,
    lib: &CellLibrary,
    samples: &[CombinedTransition],
    weights: &[i8],
    seed: u64,
) -> Result<PowerProfile> {
    if samples.is_empty() {
        return Err(Error::Input("power characterization needs at least one sample".into()));
    }
    if let Some(w) = weights.iter().find(|&&w| w == i8::MIN) {
        return Err(Error::Input(format!("weight {w} is outside the symmetric range")));
    }
    let energies: Vec<(i8, f64)> = weights
        .par_iter()
        .map(|&w| -> Result<(i8, f64)> {
            let mut sim = Simulator::new(&mac.netlist, lib)?;
            let n_in = mac.netlist.n_input_bits();
            let mut v1 = vec![false; n_in];
            let mut v2 = vec![false; n_in];
            let mut total = 0.0f64;
            for s in samples {
                mac.fill_assignment(&mut v1, w, s.a_from, s.p_from);
                mac.fill_assignment(&mut v2, w, s.a_to, s.p_to);
                sim.run(&v1, &v2)?;
                total += sim.energy_fj();
            }
            Ok((w, total))
        })
        .collect::<Result<_>>()?;

    let mut powers_uw = vec![None; 255];
    let period = lib.clock_period_ps as f64;
    for (w, total_fj) in energies {
        // fJ per ps is mW; scale to µW.
        powers_uw[(w as i32 + 127) as usize] =
            Some(1000.0 * total_fj / (samples.len() as f64 * period));
    }
    Ok(PowerProfile {
        powers_uw,
        leakage_uw: lib.total_leakage_uw(&mac.netlist.gates),
        sample_count: samples.len(),
        seed,
        clock_period_ps: lib.clock_period_ps,
    })
}

/// All 65,536 combined MAC delays for one pinned weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDelayEntry {
    pub weight: i8,
    /// ps, indexed `a_from * 256 + a_to`.
    pub delays_ps: Vec<u32>,
    pub max_delay_ps: u32,
}

/// Delay tables over a set of weights plus the shared adder bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub entries: Vec<WeightDelayEntry>,
    pub psum_bound_ps: u64,
    pub global_max_ps: u32,
}

impl DelayProfile {
    pub fn entry(&self, w: i8) -> Option<&WeightDelayEntry> {
        self.entries.iter().find(|e| e.weight == w)
    }

    pub fn weights(&self) -> Vec<i8> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    /// Histogram rows (weight, delay_ps, count), delay-sorted per weight.
    pub fn histogram(&self) -> Vec<(i8, u32, u64)> {
        let mut rows = Vec::new();
        for e in &self.entries {
            let mut counts = std::collections::BTreeMap::new();
            for &d in &e.delays_ps {
                *counts.entry(d).or_insert(0u64) += 1;
            }
            rows.extend(counts.into_iter().map(|(d, c)| (e.weight, d, c)));
        }
        rows
    }
}

/// Dynamic timing analysis of the multiplier for one weight: simulate all
/// activation transitions with the weight pinned and combine product-bit
/// arrivals with the adder's static bounds.
pub fn delay_profile(
    multiplier: &Netlist,
    lib: &CellLibrary,
    adder_bounds: &[u64],
    psum_bound_ps: u64,
    weight: i8,
) -> Result<WeightDelayEntry> {
    let product_port = multiplier
        .output_port("product")
        .ok_or_else(|| Error::Structure("multiplier has no product port".into()))?
        .clone();
    if adder_bounds.len() != product_port.width() {
        return Err(Error::Input(format!(
            "{} adder bounds for {} product bits",
            adder_bounds.len(),
            product_port.width()
        )));
    }
    let mut sim = Simulator::new(multiplier, lib)?;
    let n_in = multiplier.n_input_bits();
    let w_bits = from_signed(weight as i64, 8);
    let mut v1 = vec![false; n_in];
    let mut v2 = vec![false; n_in];
    for i in 0..8 {
        v1[i] = (w_bits >> i) & 1 == 1;
        v2[i] = v1[i];
    }
    let mut arrivals = vec![0u64; product_port.width()];
    let mut delays_ps = vec![0u32; 65536];
    let mut max_delay_ps = 0u32;
    for a_from in 0..=255u8 {
        for a_to in 0..=255u8 {
            let delay = if a_from == a_to {
                // No input toggles: no multiplier activity, only the
                // static partial-sum path remains.
                psum_bound_ps
            } else {
                for i in 0..8 {
                    v1[8 + i] = (a_from >> i) & 1 == 1;
                    v2[8 + i] = (a_to >> i) & 1 == 1;
                }
                sim.run(&v1, &v2)?;
                for (slot, &net) in arrivals.iter_mut().zip(&product_port.bits) {
                    *slot = sim.last_event_time(net);
                }
                combine_mac_delay(&arrivals, adder_bounds, psum_bound_ps)
            };
            let delay = u32::try_from(delay)
                .map_err(|_| Error::Input("delay exceeds u32 ps range".into()))?;
            delays_ps[a_from as usize * 256 + a_to as usize] = delay;
            max_delay_ps = max_delay_ps.max(delay);
        }
    }
    Ok(WeightDelayEntry { weight, delays_ps, max_delay_ps })
}

/// [`delay_profile`] over many weights, parallel per weight.
pub fn delay_profile_all(
    multiplier: &Netlist,
    lib: &CellLibrary,
    adder_bounds: &[u64],
    psum_bound_ps: u64,
    weights: &[i8],
) -> Result<DelayProfile> {
    let entries: Vec<WeightDelayEntry> = weights
        .par_iter()
        .map(|&w| delay_profile(multiplier, lib, adder_bounds, psum_bound_ps, w))
        .collect::<Result<_>>()?;
    let global_max_ps = entries.iter().map(|e| e.max_delay_ps).max().unwrap_or(0);
    Ok(DelayProfile { entries, psum_bound_ps, global_max_ps })
}

// --- binary serialization ---------------------------------------------------
//
// Little-endian throughout: magic "MPDP", u32 version, u64 psum bound,
// u32 entry count, then per entry: i8 weight (as one byte, two's
// complement), u32 max delay, 65,536 u32 delays.

const DELAY_MAGIC: &[u8; 4] = b"MPDP";
const DELAY_VERSION: u32 = 1;

impl DelayProfile {
    pub fn write_binary(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(DELAY_MAGIC)?;
        w.write_all(&DELAY_VERSION.to_le_bytes())?;
        w.write_all(&self.psum_bound_ps.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&[e.weight as u8])?;
            w.write_all(&e.max_delay_ps.to_le_bytes())?;
            let mut buf = Vec::with_capacity(e.delays_ps.len() * 4);
            for &d in &e.delays_ps {
                buf.extend_from_slice(&d.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut dyn Read) -> Result<DelayProfile> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DELAY_MAGIC {
            return Err(Error::Parse("not a delay profile (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != DELAY_VERSION {
            return Err(Error::Parse(format!("unsupported delay profile version {version}")));
        }
        let mut bound = [0u8; 8];
        r.read_exact(&mut bound)?;
        let psum_bound_ps = u64::from_le_bytes(bound);
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut wb = [0u8; 1];
            r.read_exact(&mut wb)?;
            let weight = wb[0] as i8;
            let max_delay_ps = read_u32(r)?;
            let mut raw = vec![0u8; 65536 * 4];
            r.read_exact(&mut raw)?;
            let delays_ps = raw
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(WeightDelayEntry { weight, delays_ps, max_delay_ps });
        }
        let global_max_ps = entries.iter().map(|e: &WeightDelayEntry| e.max_delay_ps).max().unwrap_or(0);
        Ok(DelayProfile { entries, psum_bound_ps, global_max_ps })
    }
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Summary form for the JSON sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct DelayProfileSummary {
    pub psum_bound_ps: u64,
    pub global_max_ps: u32,
    pub weights: Vec<DelaySummaryRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DelaySummaryRow {
    pub weight: i8,
    pub max_delay_ps: u32,
}

impl DelayProfile {
    pub fn summary(&self) -> DelayProfileSummary {
        DelayProfileSummary {
            psum_bound_ps: self.psum_bound_ps,
            global_max_ps: self.global_max_ps,
            weights: self
                .entries
                .iter()
                .map(|e| DelaySummaryRow { weight: e.weight, max_delay_ps: e.max_delay_ps })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::adder_bounds;
    use crate::netlist::{gen_adder, gen_mac, gen_multiplier};

    fn setup() -> (Netlist, CellLibrary, Vec<u64>, u64) {
        let lib = CellLibrary::default();
        let (bounds, psum) = adder_bounds(&gen_adder(), &lib).unwrap();
        (gen_multiplier(), lib, bounds, psum)
    }

    #[test]
    fn same_activation_entries_equal_psum_bound() {
        let (mult, lib, bounds, psum) = setup();
        let entry = delay_profile(&mult, &lib, &bounds, psum, 37).unwrap();
        for a in 0..=255usize {
            assert_eq!(entry.delays_ps[a * 256 + a] as u64, psum);
        }
    }

    #[test]
    fn zero_weight_never_sensitizes_the_multiplier() {
        let (mult, lib, bounds, psum) = setup();
        let entry = delay_profile(&mult, &lib, &bounds, psum, 0).unwrap();
        assert!(entry.delays_ps.iter().all(|&d| d as u64 == psum));
        assert_eq!(entry.max_delay_ps as u64, psum);
    }

    #[test]
    fn per_weight_maxima_differ_and_respect_bounds() {
        let (mult, lib, bounds, psum) = setup();
        let profile = delay_profile_all(&mult, &lib, &bounds, psum, &[64, -105]).unwrap();
        let w64 = profile.entry(64).unwrap();
        let wneg = profile.entry(-105).unwrap();
        assert!(w64.delays_ps.iter().all(|&d| d as u64 >= psum));
        assert!(wneg.delays_ps.iter().all(|&d| d as u64 >= psum));
        // Different sensitizable paths give different maxima in general.
        assert_ne!(w64.max_delay_ps, wneg.max_delay_ps);
        // Their argmax transitions differ too.
        let argmax = |e: &WeightDelayEntry| {
            e.delays_ps
                .iter()
                .enumerate()
                .max_by_key(|&(i, d)| (*d, usize::MAX - i))
                .map(|(i, _)| i)
                .unwrap()
        };
        assert_ne!(argmax(w64), argmax(wneg));
    }

    #[test]
    fn power_profile_shared_samples_and_units() {
        let mac = gen_mac();
        let lib = CellLibrary::default();
        // Single no-op sample: zero dynamic power for every weight.
        let idle = [CombinedTransition { a_from: 9, a_to: 9, p_from: 5, p_to: 5 }];
        let profile = power_profile_all(&mac, &lib, &idle, &[-3, 0, 64], 0).unwrap();
        assert_eq!(profile.power(-3), Some(0.0));
        assert_eq!(profile.power(0), Some(0.0));
        assert_eq!(profile.power(64), Some(0.0));
        assert_eq!(profile.power(1), None);
        assert_eq!(profile.n_characterized(), 3);
        assert!(profile.leakage_uw > 0.0);

        // One active sample: power = 1000 * E / (n * T).
        let active = [
            CombinedTransition { a_from: 0, a_to: 255, p_from: 0, p_to: 0x2AAAAA },
            CombinedTransition { a_from: 9, a_to: 9, p_from: 5, p_to: 5 },
        ];
        let profile = power_profile_all(&mac, &lib, &active, &[64], 0).unwrap();
        let via_sim = {
            let mut sim = Simulator::new(&mac.netlist, &lib).unwrap();
            sim.run(&mac.assignment(64, 0, 0), &mac.assignment(64, 255, 0x2AAAAA)).unwrap();
            sim.energy_fj()
        };
        let expected = 1000.0 * via_sim / (2.0 * lib.clock_period_ps as f64);
        assert!((profile.power(64).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn binary_roundtrip() {
        let (mult, lib, bounds, psum) = setup();
        let profile = delay_profile_all(&mult, &lib, &bounds, psum, &[0, 7]).unwrap();
        let mut buf = Vec::new();
        profile.write_binary(&mut buf).unwrap();
        let back = DelayProfile::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(profile, back);
    }
}
