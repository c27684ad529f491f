//! Two-phase threshold schedules with retraining.
//!
//! Power phase: walk the power threshold down from its start, rebuilding
//! the allowed weight set, retraining and evaluating at every step; stop
//! once the relative accuracy drop passes the configured cutoff and keep
//! the last passing state. Delay phase: same loop over the delay
//! threshold using randomized-restart pruning; a threshold below the
//! irreducible adder path ends the schedule normally.

use serde::Serialize;

use crate::characterize::PowerProfile;
use crate::error::{Error, Result};
use crate::select::{select_for_delay, select_weights_by_power, DelayTable, Protected, Selection};

use super::{Dataset, QuantizedNet, TrainConfig};

/// One schedule step, for logs and tradeoff reports.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleStep {
    pub phase: &'static str,
    pub threshold: f64,
    pub n_weights: usize,
    pub n_acts: usize,
    pub accuracy: f64,
    pub adopted: bool,
}

#[derive(Debug)]
pub struct PowerScheduleOutcome {
    pub threshold_uw: f64,
    pub selection: Selection,
    pub baseline_accuracy: f64,
    pub steps: Vec<ScheduleStep>,
}

#[derive(Debug)]
pub struct DelayScheduleOutcome {
    /// `None` when even the starting threshold was infeasible or failed
    /// the accuracy cutoff; the net is then left at its input state.
    pub best: Option<(u64, Selection)>,
    pub steps: Vec<ScheduleStep>,
}

/// Lowers the power threshold from `cfg.power_start_uw` by
/// `cfg.power_step_uw` down to `cfg.power_floor_uw`, retraining at each
/// step. Returns the last threshold whose retrained accuracy stays within
/// `cfg.power_stop_fraction` of the baseline; the net is left in that
/// state. Errors when the very first threshold already fails.
pub fn schedule_power_thresholds(
    net: &mut QuantizedNet,
    data: &Dataset,
    cfg: &TrainConfig,
    profile: &PowerProfile,
    protected: &Protected,
) -> Result<PowerScheduleOutcome> {
    cfg.validate()?;
    net.calibrate(data.features.view());
    let baseline_accuracy = net.evaluate(data, &Selection::full())?;
    let mut steps = Vec::new();
    let mut adopted: Option<(f64, Selection, QuantizedNet)> = None;

    let mut threshold = cfg.power_start_uw;
    while threshold >= cfg.power_floor_uw {
        let weights = select_weights_by_power(profile, threshold, protected)?;
        let selection = Selection {
            weights,
            power_threshold_uw: Some(threshold),
            ..Selection::full()
        };
        let mut candidate = net.clone();
        candidate.train(data, cfg, &selection)?;
        let accuracy = candidate.evaluate(data, &selection)?;
        let ok = relative_drop(baseline_accuracy, accuracy) <= cfg.power_stop_fraction;
        steps.push(ScheduleStep {
            phase: "power",
            threshold,
            n_weights: selection.weights.len(),
            n_acts: selection.acts.len(),
            accuracy,
            adopted: ok,
        });
        if !ok {
            break;
        }
        adopted = Some((threshold, selection, candidate));
        threshold -= cfg.power_step_uw;
    }

    match adopted {
        None => Err(Error::Schedule(format!(
            "first power threshold {} uW already drops accuracy beyond {}",
            cfg.power_start_uw, cfg.power_stop_fraction
        ))),
        Some((threshold_uw, selection, trained)) => {
            *net = trained;
            Ok(PowerScheduleOutcome { threshold_uw, selection, baseline_accuracy, steps })
        }
    }
}

/// Lowers the delay threshold from `cfg.delay_start_ps` in
/// `cfg.delay_step_ps` decrements, selecting weight/activation sets with
/// `restarts` randomized pruning runs and retraining at each step.
/// `baseline_accuracy` is the original (pre-restriction) accuracy the 5%
/// cutoff refers to. Thresholds below the partial-sum bound terminate the
/// schedule normally.
pub fn schedule_delay_thresholds(
    net: &mut QuantizedNet,
    data: &Dataset,
    cfg: &TrainConfig,
    table: &DelayTable,
    restarts: usize,
    seed: u64,
    baseline_accuracy: f64,
    protected: &Protected,
) -> Result<DelayScheduleOutcome> {
    cfg.validate()?;
    let mut steps = Vec::new();
    let mut best: Option<(u64, Selection, QuantizedNet)> = None;

    let mut threshold = cfg.delay_start_ps;
    loop {
        if threshold < table.psum_bound_ps {
            break; // irreducible adder path: nothing below is feasible
        }
        let selection = match select_for_delay(table, threshold, restarts, seed, protected) {
            Ok(sel) => sel,
            Err(Error::Infeasible(_)) => break,
            Err(e) => return Err(e),
        };
        let mut candidate = net.clone();
        candidate.train(data, cfg, &selection)?;
        let accuracy = candidate.evaluate(data, &selection)?;
        let ok = relative_drop(baseline_accuracy, accuracy) <= cfg.delay_stop_fraction;
        steps.push(ScheduleStep {
            phase: "delay",
            threshold: threshold as f64,
            n_weights: selection.weights.len(),
            n_acts: selection.acts.len(),
            accuracy,
            adopted: ok,
        });
        if !ok {
            break;
        }
        best = Some((threshold, selection, candidate));
        if threshold < cfg.delay_floor_ps + cfg.delay_step_ps {
            break;
        }
        threshold -= cfg.delay_step_ps;
    }

    Ok(match best {
        Some((threshold, selection, trained)) => {
            *net = trained;
            DelayScheduleOutcome { best: Some((threshold, selection)), steps }
        }
        None => DelayScheduleOutcome { best: None, steps },
    })
}

fn relative_drop(baseline: f64, current: f64) -> f64 {
    if baseline <= 0.0 {
        return 0.0;
    }
    (baseline - current) / baseline
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::Protected;

    fn tiny_profile(powers: impl Fn(i8) -> f64) -> PowerProfile {
        PowerProfile::from_fn(powers, 1.0, 200)
    }

    #[test]
    fn power_schedule_runs_to_floor_with_loose_cutoff() {
        let data = Dataset::synthetic_blobs(200, 10, 3, 21);
        let mut net = QuantizedNet::new_mlp(&[10, 8, 3], 1);
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.1,
            power_start_uw: 100.0,
            power_step_uw: 25.0,
            power_floor_uw: 50.0,
            power_stop_fraction: 1.0, // never stop on accuracy
            ..TrainConfig::default()
        };
        // Power grows with |w|; thresholds 100/75/50 progressively shrink
        // the allowed set.
        let profile = tiny_profile(|w| w.unsigned_abs() as f64);
        let out =
            schedule_power_thresholds(&mut net, &data, &cfg, &profile, &Protected::default())
                .unwrap();
        assert_eq!(out.steps.len(), 3);
        assert_eq!(out.threshold_uw, 50.0);
        assert!(out.steps.iter().all(|s| s.adopted));
        assert_eq!(out.selection.weights.len(), 2 * 50 + 1);
    }

    #[test]
    fn power_schedule_stops_at_last_passing_threshold() {
        // Monotone degradation without retraining (epochs 0): shrinking
        // the weight set can only hurt, so the schedule must stop at the
        // last threshold within the cutoff.
        let data = Dataset::synthetic_blobs(300, 10, 3, 22);
        let mut net = QuantizedNet::new_mlp(&[10, 8, 3], 2);
        let warmup = TrainConfig { epochs: 8, learning_rate: 0.1, ..TrainConfig::default() };
        net.train(&data, &warmup, &Selection::full()).unwrap();

        let cfg = TrainConfig {
            epochs: 0,
            power_start_uw: 127.0,
            power_step_uw: 42.0,
            power_floor_uw: 1.0,
            power_stop_fraction: 0.05,
            ..TrainConfig::default()
        };
        let profile = tiny_profile(|w| w.unsigned_abs() as f64);
        match schedule_power_thresholds(&mut net, &data, &cfg, &profile, &Protected::default()) {
            Ok(out) => {
                let last_adopted = out.steps.iter().rev().find(|s| s.adopted).unwrap();
                assert_eq!(out.threshold_uw, last_adopted.threshold);
                // If any step failed the cutoff it must be the final one.
                for (i, s) in out.steps.iter().enumerate() {
                    assert!(s.adopted || i == out.steps.len() - 1);
                }
            }
            Err(Error::Schedule(_)) => {
                // Even 127 uW (all weights) may fail only if evaluation is
                // degenerate; the blobs make that impossible.
                panic!("first threshold keeps the full set and cannot fail");
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
