//! Weight/activation value selection and the voltage-scaling power model.

mod prune;
mod voltage;

pub use prune::{prune_for_delay, select_for_delay, DelayTable};
pub use voltage::VoltageModel;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::characterize::PowerProfile;
use crate::error::{Error, Result};

/// Surviving weight and activation value sets with the thresholds that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub weights: BTreeSet<i8>,
    pub acts: BTreeSet<u8>,
    pub power_threshold_uw: Option<f64>,
    pub delay_threshold_ps: Option<u64>,
    pub achieved_max_delay_ps: Option<u64>,
}

impl Selection {
    /// All 255 weight values and all 256 activation values.
    pub fn full() -> Selection {
        Selection {
            weights: (-127..=127).collect(),
            acts: (0..=255).collect(),
            power_threshold_uw: None,
            delay_threshold_ps: None,
            achieved_max_delay_ps: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SelectionJson::from(self)).expect("selection serializes")
    }

    pub fn from_json(text: &str) -> Result<Selection> {
        let raw: SelectionJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("selection: {e}")))?;
        Ok(raw.into())
    }
}

// JSON form uses plain integer arrays.
#[derive(Serialize, Deserialize)]
struct SelectionJson {
    weights: Vec<i16>,
    acts: Vec<u16>,
    power_threshold: Option<f64>,
    delay_threshold: Option<u64>,
    achieved_max_delay: Option<u64>,
}

impl From<&Selection> for SelectionJson {
    fn from(s: &Selection) -> Self {
        SelectionJson {
            weights: s.weights.iter().map(|&w| w as i16).collect(),
            acts: s.acts.iter().map(|&a| a as u16).collect(),
            power_threshold: s.power_threshold_uw,
            delay_threshold: s.delay_threshold_ps,
            achieved_max_delay: s.achieved_max_delay_ps,
        }
    }
}

impl From<SelectionJson> for Selection {
    fn from(s: SelectionJson) -> Self {
        Selection {
            weights: s.weights.iter().map(|&w| w as i8).collect(),
            acts: s.acts.iter().map(|&a| a as u8).collect(),
            power_threshold_uw: s.power_threshold,
            delay_threshold_ps: s.delay_threshold,
            achieved_max_delay_ps: s.achieved_max_delay,
        }
    }
}

/// Values removal may never touch. Weight 0 is required by clock gating
/// and zero-pruning; activation 0 is produced structurally by padding and
/// the rectifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Protected {
    pub weights: BTreeSet<i8>,
    pub acts: BTreeSet<u8>,
}

impl Default for Protected {
    fn default() -> Self {
        Protected { weights: [0].into(), acts: [0].into() }
    }
}

impl Protected {
    pub fn none() -> Protected {
        Protected { weights: BTreeSet::new(), acts: BTreeSet::new() }
    }
}

/// Weights whose average dynamic power is at or below `threshold_uw`,
/// plus the protected weights.
pub fn select_weights_by_power(
    profile: &PowerProfile,
    threshold_uw: f64,
    protected: &Protected,
) -> Result<BTreeSet<i8>> {
    if !(threshold_uw > 0.0) {
        return Err(Error::Threshold(format!(
            "power threshold must be positive, got {threshold_uw}"
        )));
    }
    let mut selected: BTreeSet<i8> = profile
        .weights()
        .filter(|&(_, p)| p <= threshold_uw)
        .map(|(w, _)| w)
        .collect();
    selected.extend(protected.weights.iter().copied());
    if selected.is_empty() {
        return Err(Error::Threshold(format!(
            "no weight has average power <= {threshold_uw} uW and nothing is protected"
        )));
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_from(f: impl Fn(i8) -> f64) -> PowerProfile {
        PowerProfile::from_fn(f, 0.5, 200)
    }

    #[test]
    fn threshold_rule_keeps_cheap_weights() {
        // Shaped after the reference magnitudes: -105 is expensive, -2 is
        // cheap; a 900 uW threshold keeps -2 and drops -105.
        let profile = profile_from(|w| match w {
            -105 => 1066.0,
            -2 => 596.0,
            _ => 700.0,
        });
        let set = select_weights_by_power(&profile, 900.0, &Protected::default()).unwrap();
        assert!(set.contains(&-2));
        assert!(!set.contains(&-105));
        assert!(set.contains(&0)); // protected
    }

    #[test]
    fn max_threshold_keeps_all_255() {
        let profile = profile_from(|w| w.unsigned_abs() as f64 + 1.0);
        let set = select_weights_by_power(&profile, 128.0, &Protected::default()).unwrap();
        assert_eq!(set.len(), 255);
    }

    #[test]
    fn tight_threshold_keeps_only_protected_zero() {
        let profile = profile_from(|w| if w == 0 { 0.5 } else { 10.0 + w.unsigned_abs() as f64 });
        let set = select_weights_by_power(&profile, 1.0, &Protected::default()).unwrap();
        assert_eq!(set, [0].into());
        // Without protection and below even the cheapest weight: error.
        let err = select_weights_by_power(&profile, 0.1, &Protected::none());
        assert!(matches!(err, Err(Error::Threshold(_))));
    }

    #[test]
    fn selection_json_roundtrip() {
        let mut sel = Selection::full();
        sel.weights = [-3, 0, 64].into();
        sel.power_threshold_uw = Some(800.0);
        sel.achieved_max_delay_ps = Some(310);
        let back = Selection::from_json(&sel.to_json()).unwrap();
        assert_eq!(sel, back);
    }
}
