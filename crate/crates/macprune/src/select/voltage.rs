//! Supply-voltage scaling model.
//!
//! Anchor points relate a fractional reduction of the maximum sensitized
//! delay to the voltage ratio that still meets the original clock; power
//! then scales as ratio^2 for dynamic and ratio^1 for leakage (both
//! exponents configurable).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::PowerEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageModel {
    /// (delay_reduction_fraction, voltage_ratio), strictly increasing in
    /// the fraction, strictly decreasing in the ratio, starting at (0, 1).
    pub anchors: Vec<(f64, f64)>,
    #[serde(default = "default_dynamic_exponent")]
    pub dynamic_exponent: f64,
    #[serde(default = "default_leakage_exponent")]
    pub leakage_exponent: f64,
    /// Fractions beyond the last anchor error out unless this is set.
    #[serde(default)]
    pub allow_extrapolation: bool,
}

fn default_dynamic_exponent() -> f64 {
    2.0
}

fn default_leakage_exponent() -> f64 {
    1.0
}

impl Default for VoltageModel {
    fn default() -> Self {
        // Reference anchors: reducing a 180 ps critical path by 20/30/40 ps
        // admits 0.75/0.8, 0.73/0.8 and 0.71/0.8 supply ratios.
        VoltageModel {
            anchors: vec![
                (0.0, 1.0),
                (20.0 / 180.0, 0.75 / 0.8),
                (30.0 / 180.0, 0.73 / 0.8),
                (40.0 / 180.0, 0.71 / 0.8),
            ],
            dynamic_exponent: 2.0,
            leakage_exponent: 1.0,
            allow_extrapolation: false,
        }
    }
}

impl VoltageModel {
    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::Config("voltage model needs at least one anchor".into()));
        }
        if self.anchors[0] != (0.0, 1.0) {
            return Err(Error::Config("voltage model must anchor (0, 1.0)".into()));
        }
        for pair in self.anchors.windows(2) {
            if pair[1].0 <= pair[0].0 || pair[1].1 >= pair[0].1 {
                return Err(Error::Config(
                    "voltage anchors must be strictly increasing in reduction and \
                     strictly decreasing in ratio"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    pub fn max_anchor_fraction(&self) -> f64 {
        self.anchors.last().map(|&(f, _)| f).unwrap_or(0.0)
    }

    /// Voltage ratio for a fractional delay reduction, piecewise-linear
    /// through the anchors. Exact at every anchor.
    pub fn voltage_factor(&self, fraction: f64) -> Result<f64> {
        self.validate()?;
        if !(0.0..).contains(&fraction) || !fraction.is_finite() {
            return Err(Error::Config(format!("delay reduction fraction {fraction} invalid")));
        }
        if let Some(&(_, ratio)) = self.anchors.iter().find(|&&(f, _)| f == fraction) {
            return Ok(ratio);
        }
        let last = *self.anchors.last().expect("validated non-empty");
        if fraction > last.0 {
            if !self.allow_extrapolation {
                return Err(Error::Config(format!(
                    "fraction {fraction:.4} beyond last anchor {:.4}; extrapolation \
                     requires explicit opt-in",
                    last.0
                )));
            }
            let prev = self.anchors[self.anchors.len() - 2];
            return Ok(interpolate(prev, last, fraction));
        }
        let seg = self
            .anchors
            .windows(2)
            .find(|pair| pair[0].0 < fraction && fraction < pair[1].0)
            .expect("fraction inside anchor range");
        Ok(interpolate(seg[0], seg[1], fraction))
    }

    /// Applies the ratio to a power estimate: dynamic x ratio^d, leakage
    /// x ratio^l, totals recomputed.
    pub fn scale_power(&self, e: &PowerEstimate, ratio: f64) -> Result<PowerEstimate> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!("voltage ratio {ratio} out of (0, 1]")));
        }
        let dyn_f = ratio.powf(self.dynamic_exponent);
        let leak_f = ratio.powf(self.leakage_exponent);
        Ok(e.scaled(dyn_f, leak_f))
    }
}

fn interpolate(a: (f64, f64), b: (f64, f64), x: f64) -> f64 {
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_exact() {
        let m = VoltageModel::default();
        assert_eq!(m.voltage_factor(0.0).unwrap(), 1.0);
        assert_eq!(m.voltage_factor(20.0 / 180.0).unwrap(), 0.75 / 0.8);
        assert_eq!(m.voltage_factor(30.0 / 180.0).unwrap(), 0.73 / 0.8);
        assert_eq!(m.voltage_factor(40.0 / 180.0).unwrap(), 0.71 / 0.8);
    }

    #[test]
    fn interpolation_between_anchors() {
        let m = VoltageModel::default();
        let mid = m.voltage_factor(25.0 / 180.0).unwrap();
        assert!((mid - 0.925).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_requires_opt_in() {
        let mut m = VoltageModel::default();
        assert!(m.voltage_factor(0.5).is_err());
        m.allow_extrapolation = true;
        let v = m.voltage_factor(0.5).unwrap();
        assert!(v < 0.8875);
    }

    #[test]
    fn factor_is_non_increasing() {
        let m = VoltageModel::default();
        let mut prev = f64::INFINITY;
        for i in 0..=40 {
            let f = i as f64 / 180.0;
            let v = m.voltage_factor(f).unwrap();
            assert!(v <= prev, "ratio increased at {f}");
            prev = v;
        }
    }

    #[test]
    fn bad_anchor_shapes_rejected() {
        let mut m = VoltageModel::default();
        m.anchors[0] = (0.0, 0.99);
        assert!(m.validate().is_err());
        let mut m = VoltageModel::default();
        m.anchors[2].1 = 0.95; // not decreasing
        assert!(m.validate().is_err());
    }
}
