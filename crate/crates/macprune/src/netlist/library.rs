//! Cell library: per-gate-kind delay, switching energy and leakage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::GateKind;

/// Timing/energy parameters of one gate kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Propagation delay in ps (same for rise and fall).
    pub delay_ps: u32,
    /// Energy per output transition in fJ.
    pub switch_energy_fj: f64,
    /// Static leakage in nW.
    pub leakage_nw: f64,
}

/// Parameters for every supported gate kind plus the target clock period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLibrary {
    pub cells: BTreeMap<GateKind, CellParams>,
    /// Clock period in ps. Average dynamic power is energy per cycle
    /// divided by this period.
    pub clock_period_ps: u32,
}

impl Default for CellLibrary {
    fn default() -> Self {
        let mut cells = BTreeMap::new();
        let mut put = |kind: GateKind, delay_ps: u32, switch_energy_fj: f64| {
            cells.insert(
                kind,
                CellParams { delay_ps, switch_energy_fj, leakage_nw: 2.0 },
            );
        };
        put(GateKind::Inv, 5, 0.4);
        put(GateKind::Buf, 6, 0.5);
        put(GateKind::Nand2, 8, 0.6);
        put(GateKind::Nor2, 8, 0.6);
        put(GateKind::And2, 10, 0.8);
        put(GateKind::Or2, 10, 0.8);
        put(GateKind::Xor2, 12, 1.0);
        put(GateKind::Xnor2, 12, 1.0);
        CellLibrary { cells, clock_period_ps: 200 }
    }
}

impl CellLibrary {
    pub fn params(&self, kind: GateKind) -> CellParams {
        self.cells[&kind]
    }

    pub fn delay_ps(&self, kind: GateKind) -> u32 {
        self.cells[&kind].delay_ps
    }

    /// Sum of leakage over a gate list, in µW.
    pub fn total_leakage_uw(&self, gates: &[super::Gate]) -> f64 {
        gates
            .iter()
            .map(|g| self.cells[&g.kind].leakage_nw)
            .sum::<f64>()
            / 1000.0
    }
}

/// Builds a library from a flat parameter map, filling unset entries with
/// defaults.
///
/// Recognized keys: `clock_period` and `<KIND>.delay`, `<KIND>.energy`,
/// `<KIND>.leakage` where `<KIND>` is one of INV, BUF, AND2, OR2, NAND2,
/// NOR2, XOR2, XNOR2. Delays and the clock period are positive integers
/// (ps); energies (fJ) and leakages (nW) are non-negative numbers.
pub fn build_cell_library(config: &BTreeMap<String, f64>) -> Result<CellLibrary> {
    let mut lib = CellLibrary::default();
    for (key, &value) in config {
        if !value.is_finite() {
            return Err(Error::Config(format!("{key}: value must be finite")));
        }
        if key == "clock_period" {
            lib.clock_period_ps = as_positive_ps(key, value)?;
            continue;
        }
        let (kind_str, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("unrecognized key `{key}`")))?;
        let kind = GateKind::parse(kind_str)
            .ok_or_else(|| Error::Config(format!("unknown gate kind `{kind_str}`")))?;
        let params = lib.cells.get_mut(&kind).expect("all kinds present");
        match field {
            "delay" => params.delay_ps = as_positive_ps(key, value)?,
            "energy" => params.switch_energy_fj = as_non_negative(key, value)?,
            "leakage" => params.leakage_nw = as_non_negative(key, value)?,
            _ => return Err(Error::Config(format!("unrecognized key `{key}`"))),
        }
    }
    Ok(lib)
}

/// Loads a library from a flat JSON object (`{"XOR2.delay": 15, ...}`).
pub fn cell_library_from_json(text: &str) -> Result<CellLibrary> {
    let map: BTreeMap<String, f64> =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("cell library: {e}")))?;
    build_cell_library(&map)
}

fn as_positive_ps(key: &str, value: f64) -> Result<u32> {
    if value <= 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(Error::Config(format!(
            "{key}: expected a positive integer number of ps, got {value}"
        )));
    }
    Ok(value as u32)
}

fn as_non_negative(key: &str, value: f64) -> Result<f64> {
    if value < 0.0 {
        return Err(Error::Config(format!("{key}: must be non-negative, got {value}")));
    }
    Ok(value)
}
