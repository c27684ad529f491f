//! Library-level command implementations behind the CLI.

use std::path::PathBuf;

use ndarray::s;

use crate::characterize::{
    build_act_dist, build_bin_dist, build_bins, delay_profile_all, power_profile_all,
    sample_combined, ActDist, BinDist, BinPartition, CombinedTransition, DelayProfile,
    PowerProfile,
};
use crate::engine::adder_bounds;
use crate::error::{Error, Result};
use crate::netlist::{gen_adder, gen_mac, gen_multiplier, CellLibrary, MacNetlist, Netlist};
use crate::qnn::{
    schedule_delay_thresholds, schedule_power_thresholds, DataFormat, Dataset, FixedNet,
    QuantizedNet, ScheduleStep, TrainConfig,
};
use crate::select::{
    select_for_delay, select_weights_by_power, DelayTable, Protected, Selection, VoltageModel,
};
use crate::workload::{estimate_array_power, run_systolic, ArrayConfig, HwMode, WorkloadStats};

use super::artifacts::{Checkpoint, EstimateReport, TradeoffRow};

/// Immutable per-run hardware context: the MAC and its timing bounds.
pub struct Workbench {
    pub lib: CellLibrary,
    pub mac: MacNetlist,
    pub multiplier: Netlist,
    pub adder: Netlist,
    pub adder_bounds: Vec<u64>,
    pub psum_bound_ps: u64,
    /// Static longest path through the whole MAC; the unrestricted clock
    /// period and the reference for delay-reduction fractions.
    pub mac_sta_max_ps: u64,
}

impl Workbench {
    pub fn new(lib: CellLibrary) -> Result<Workbench> {
        let adder = gen_adder();
        let (bounds, psum_bound_ps) = adder_bounds(&adder, &lib)?;
        let mac = gen_mac();
        let mac_sta = crate::engine::sta(&mac.netlist, &lib)?;
        let inputs: Vec<usize> = (0..mac.netlist.n_input_bits()).collect();
        let mac_sta_max_ps = mac_sta
            .max_over(&inputs, &mac.sum_port().bits)
            .unwrap_or(0);
        Ok(Workbench {
            mac,
            multiplier: gen_multiplier(),
            adder,
            adder_bounds: bounds,
            psum_bound_ps,
            mac_sta_max_ps,
            lib,
        })
    }
}

#[derive(Debug, Clone)]
pub enum DatasetSource {
    Synthetic { n: usize, dims: usize, classes: usize },
    File { path: PathBuf, format: DataFormat },
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { n, dims, classes } => {
                Ok(Dataset::synthetic_blobs(*n, *dims, *classes, seed))
            }
            DatasetSource::File { path, format } => {
                Ok(Dataset::load(path, *format)?.with_holdout(0.2, seed))
            }
        }
    }
}

/// Trains a workload model and streams it through the array simulator to
/// gather transition statistics.
pub struct WorkloadArgs {
    pub array: ArrayConfig,
    pub hidden: usize,
    pub epochs: usize,
    pub stats_rows: usize,
    pub seed: u64,
}

pub struct WorkloadOutput {
    pub net: QuantizedNet,
    pub fixed: FixedNet,
    pub accuracy: f64,
    pub stats: WorkloadStats,
}

pub fn build_workload(data: &Dataset, args: &WorkloadArgs) -> Result<WorkloadOutput> {
    let full = Selection::full();
    let dims = [data.feature_dim(), args.hidden, data.n_classes()];
    let mut net = QuantizedNet::new_mlp(&dims, args.seed);
    let cfg = TrainConfig { epochs: args.epochs, seed: args.seed, ..TrainConfig::default() };
    net.train(data, &cfg, &full)?;
    let accuracy = net.evaluate(data, &full)?;
    let fixed = net.materialize(&full)?;
    let stats = collect_stats(&fixed, data, &args.array, args.stats_rows)?;
    Ok(WorkloadOutput { net, fixed, accuracy, stats })
}

/// Runs the systolic simulator over up to `rows` training rows.
pub fn collect_stats(
    fixed: &FixedNet,
    data: &Dataset,
    array: &ArrayConfig,
    rows: usize,
) -> Result<WorkloadStats> {
    let take = rows.min(data.len()).max(1);
    let features = data.features.slice(s![..take, ..]);
    let (_, stats) = run_systolic(fixed, features, array)?;
    Ok(stats)
}

pub struct CharacterizeArgs {
    pub n_samples: usize,
    pub bins: usize,
    pub bin_member_cap: usize,
    /// Weights to power-characterize.
    pub weights: Vec<i8>,
    /// Weights to delay-characterize (65,536 simulations each); defaults
    /// to `weights` when empty.
    pub delay_weights: Vec<i8>,
    pub seed: u64,
}

pub struct CharacterizeOutput {
    pub act_dist: ActDist,
    pub partition: BinPartition,
    pub bin_dist: BinDist,
    pub combined: Vec<CombinedTransition>,
    pub power: PowerProfile,
    pub delay: DelayProfile,
}

/// Distributions, combined samples and both per-weight profiles from
/// workload statistics.
pub fn characterize(
    wb: &Workbench,
    stats: &WorkloadStats,
    args: &CharacterizeArgs,
) -> Result<CharacterizeOutput> {
    let act_dist = build_act_dist(stats)?;
    let psum_values = stats.psum_values.items();
    let partition = build_bins(&psum_values, args.bins, derive(args.seed, 1), args.bin_member_cap)?;
    let bin_dist = build_bin_dist(stats, &partition)?;
    let combined = sample_combined(&act_dist, &bin_dist, &partition, args.n_samples, derive(args.seed, 2))?;
    let power = power_profile_all(&wb.mac, &wb.lib, &combined, &args.weights, args.seed)?;
    let delay_weights = if args.delay_weights.is_empty() {
        &args.weights
    } else {
        &args.delay_weights
    };
    let delay = delay_profile_all(
        &wb.multiplier,
        &wb.lib,
        &wb.adder_bounds,
        wb.psum_bound_ps,
        delay_weights,
    )?;
    Ok(CharacterizeOutput { act_dist, partition, bin_dist, combined, power, delay })
}

/// splitmix64 step; keeps derived sub-seeds independent of each other.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Power-threshold selection optionally tightened by delay pruning.
pub fn select(
    power: &PowerProfile,
    delay: &DelayProfile,
    power_threshold_uw: f64,
    delay_threshold_ps: Option<u64>,
    restarts: usize,
    seed: u64,
    protected: &Protected,
) -> Result<Selection> {
    let weights = select_weights_by_power(power, power_threshold_uw, protected)?;
    let candidates: Vec<i8> = weights
        .iter()
        .copied()
        .filter(|&w| delay.entry(w).is_some())
        .collect();
    match delay_threshold_ps {
        None => Ok(Selection {
            weights,
            power_threshold_uw: Some(power_threshold_uw),
            ..Selection::full()
        }),
        Some(threshold) => {
            if candidates.is_empty() {
                return Err(Error::Profile(
                    "no power-selected weight has a delay table".into(),
                ));
            }
            let table = DelayTable::from_profile(delay, &candidates)?;
            let mut sel = select_for_delay(&table, threshold, restarts, seed, protected)?;
            sel.power_threshold_uw = Some(power_threshold_uw);
            Ok(sel)
        }
    }
}

/// Trains a fresh net restricted to `selection` and snapshots it.
pub struct TrainArgs {
    pub hidden: usize,
    pub cfg: TrainConfig,
}

pub fn train_restricted(
    data: &Dataset,
    selection: &Selection,
    args: &TrainArgs,
) -> Result<(Checkpoint, Vec<crate::qnn::EpochStats>)> {
    let dims = [data.feature_dim(), args.hidden, data.n_classes()];
    let mut net = QuantizedNet::new_mlp(&dims, args.cfg.seed);
    let history = net.train(data, &args.cfg, selection)?;
    let accuracy = net.evaluate(data, selection)?;
    let fixed = net.materialize(selection)?;
    Ok((
        Checkpoint { net: fixed, selection: selection.clone(), accuracy, seed: args.cfg.seed },
        history,
    ))
}

/// Standard/optimized estimates for a checkpointed net over a dataset,
/// with voltage scaling when a delay reduction is known.
pub fn estimate(
    wb: &Workbench,
    ckpt: &Checkpoint,
    data: &Dataset,
    array: &ArrayConfig,
    stats_rows: usize,
    power: &PowerProfile,
    voltage: &VoltageModel,
    baseline_max_delay_ps: Option<u64>,
) -> Result<EstimateReport> {
    let stats = collect_stats(&ckpt.net, data, array, stats_rows)?;
    let standard = estimate_array_power(&stats, power, &wb.lib, HwMode::Standard)?;
    let optimized = estimate_array_power(&stats, power, &wb.lib, HwMode::Optimized)?;

    let mut report = EstimateReport {
        standard,
        optimized,
        delay_reduction_fraction: None,
        voltage_ratio: None,
        scaled_standard: None,
        scaled_optimized: None,
    };
    if let (Some(baseline), Some(achieved)) =
        (baseline_max_delay_ps, ckpt.selection.achieved_max_delay_ps)
    {
        if baseline > 0 && achieved <= baseline {
            let fraction = (baseline - achieved) as f64 / baseline as f64;
            // The model is only calibrated up to its last anchor; larger
            // reductions scale conservatively at the anchor's ratio.
            let usable = fraction.min(voltage.max_anchor_fraction());
            let ratio = voltage.voltage_factor(usable)?;
            report.delay_reduction_fraction = Some(fraction);
            report.voltage_ratio = Some(ratio);
            report.scaled_standard = Some(voltage.scale_power(&report.standard, ratio)?);
            report.scaled_optimized = Some(voltage.scale_power(&report.optimized, ratio)?);
        }
    }
    Ok(report)
}

/// Threshold sweep: retrain and estimate at every requested threshold.
#[allow(clippy::too_many_arguments)]
pub fn report_sweep(
    wb: &Workbench,
    data: &Dataset,
    power: &PowerProfile,
    delay: &DelayProfile,
    power_thresholds: &[f64],
    delay_thresholds: &[u64],
    array: &ArrayConfig,
    stats_rows: usize,
    train: &TrainArgs,
    restarts: usize,
    voltage: &VoltageModel,
    protected: &Protected,
) -> Result<Vec<TradeoffRow>> {
    let baseline_max = delay.global_max_ps as u64;
    let mut rows = Vec::new();
    for &t in power_thresholds {
        let sel = select(power, delay, t, None, restarts, derive(train.cfg.seed, t as u64), protected)?;
        let (ckpt, _) = train_restricted(data, &sel, train)?;
        let est = estimate(wb, &ckpt, data, array, stats_rows, power, voltage, None)?;
        rows.push(TradeoffRow {
            phase: "power".into(),
            threshold: t,
            n_weights: sel.weights.len(),
            n_acts: sel.acts.len(),
            accuracy: ckpt.accuracy,
            std_power_uw: est.standard.total_uw,
            opt_power_uw: est.optimized.total_uw,
            voltage_ratio: 1.0,
            scaled_power_uw: est.optimized.total_uw,
        });
    }
    let power_floor = power_thresholds.last().copied().unwrap_or(f64::INFINITY);
    for &t in delay_thresholds {
        let sel = select(
            power,
            delay,
            power_floor,
            Some(t),
            restarts,
            derive(train.cfg.seed, t),
            protected,
        )?;
        let (ckpt, _) = train_restricted(data, &sel, train)?;
        let est = estimate(
            wb,
            &ckpt,
            data,
            array,
            stats_rows,
            power,
            voltage,
            Some(baseline_max),
        )?;
        let ratio = est.voltage_ratio.unwrap_or(1.0);
        let scaled = est
            .scaled_optimized
            .as_ref()
            .map(|e| e.total_uw)
            .unwrap_or(est.optimized.total_uw);
        rows.push(TradeoffRow {
            phase: "delay".into(),
            threshold: t as f64,
            n_weights: sel.weights.len(),
            n_acts: sel.acts.len(),
            accuracy: ckpt.accuracy,
            std_power_uw: est.standard.total_uw,
            opt_power_uw: est.optimized.total_uw,
            voltage_ratio: ratio,
            scaled_power_uw: scaled,
        });
    }
    Ok(rows)
}

/// End-to-end pipeline configuration.
pub struct PipelineArgs {
    pub data: DatasetSource,
    pub array: ArrayConfig,
    pub hidden: usize,
    pub baseline_epochs: usize,
    pub retrain_epochs: usize,
    pub stats_rows: usize,
    pub n_samples: usize,
    pub bins: usize,
    pub bin_member_cap: usize,
    pub restarts: usize,
    pub seed: u64,
    /// `None` derives the power schedule from the measured profile.
    pub power_start_uw: Option<f64>,
    /// `None` spans start..floor in eight steps.
    pub power_step_uw: Option<f64>,
    pub power_floor_uw: Option<f64>,
    /// `None` starts just below the measured unrestricted maximum delay.
    pub delay_start_ps: Option<u64>,
    pub delay_step_ps: u64,
    pub voltage: VoltageModel,
    pub prune_magnitude: Option<u8>,
}

impl Default for PipelineArgs {
    fn default() -> Self {
        PipelineArgs {
            data: DatasetSource::Synthetic { n: 10_000, dims: 784, classes: 10 },
            array: ArrayConfig::default(),
            hidden: 128,
            baseline_epochs: 6,
            retrain_epochs: 2,
            stats_rows: 512,
            n_samples: 10_000,
            bins: 50,
            bin_member_cap: 4096,
            restarts: 20,
            seed: 1,
            power_start_uw: None,
            power_step_uw: None,
            power_floor_uw: None,
            delay_start_ps: None,
            delay_step_ps: 10,
            voltage: VoltageModel::default(),
            prune_magnitude: Some(2),
        }
    }
}

pub struct PipelineOutput {
    pub baseline: Checkpoint,
    pub baseline_estimate: EstimateReport,
    pub stats: WorkloadStats,
    pub characterization: CharacterizeOutput,
    pub power_threshold_uw: f64,
    pub final_checkpoint: Checkpoint,
    pub final_estimate: EstimateReport,
    pub steps: Vec<ScheduleStep>,
    pub tradeoff: Vec<TradeoffRow>,
}

/// characterize -> select -> train -> estimate -> report, with the two
/// retraining schedules in the middle.
pub fn pipeline(wb: &Workbench, args: &PipelineArgs) -> Result<PipelineOutput> {
    let data = args.data.load(derive(args.seed, 10))?;
    let protected = Protected::default();

    // Baseline model and workload statistics.
    let workload = build_workload(
        &data,
        &WorkloadArgs {
            array: with_seed(&args.array, derive(args.seed, 11)),
            hidden: args.hidden,
            epochs: args.baseline_epochs,
            stats_rows: args.stats_rows,
            seed: derive(args.seed, 12),
        },
    )?;
    let baseline = Checkpoint {
        net: workload.fixed.clone(),
        selection: Selection::full(),
        accuracy: workload.accuracy,
        seed: args.seed,
    };

    // Power characterization over all representable weights; delay
    // characterization waits for the power phase to pick its candidates.
    let mut characterization = characterize(
        wb,
        &workload.stats,
        &CharacterizeArgs {
            n_samples: args.n_samples,
            bins: args.bins,
            bin_member_cap: args.bin_member_cap,
            weights: (-127..=127).collect(),
            delay_weights: vec![0],
            seed: derive(args.seed, 13),
        },
    )?;
    let power = &characterization.power;
    // The unrestricted design closes timing at the static bound.
    let baseline_max = wb.mac_sta_max_ps;

    let baseline_estimate = estimate(
        wb,
        &baseline,
        &data,
        &args.array,
        args.stats_rows,
        power,
        &args.voltage,
        None,
    )?;

    // Power-threshold schedule.
    let powers: Vec<f64> = power.weights().map(|(_, p)| p).collect();
    let start_uw = args.power_start_uw.unwrap_or_else(|| quantile(&powers, 0.90));
    let floor_uw = args.power_floor_uw.unwrap_or_else(|| quantile(&powers, 0.40));
    let (start_uw, floor_uw) = (start_uw.max(floor_uw), floor_uw.min(start_uw));
    let step_uw = args
        .power_step_uw
        .unwrap_or_else(|| ((start_uw - floor_uw) / 8.0).max(1.0));
    let mut cfg = TrainConfig {
        epochs: args.retrain_epochs,
        seed: derive(args.seed, 14),
        power_start_uw: start_uw,
        power_step_uw: step_uw,
        power_floor_uw: floor_uw,
        prune_magnitude: args.prune_magnitude,
        ..TrainConfig::default()
    };
    let mut net = workload.net.clone();
    let power_outcome = schedule_power_thresholds(&mut net, &data, &cfg, power, &protected)?;
    let mut steps = power_outcome.steps.clone();

    // Dynamic timing analysis of the surviving weight candidates, then
    // the delay-threshold schedule over them.
    let candidates: Vec<i8> = power_outcome.selection.weights.iter().copied().collect();
    characterization.delay = crate::characterize::delay_profile_all(
        &wb.multiplier,
        &wb.lib,
        &wb.adder_bounds,
        wb.psum_bound_ps,
        &candidates,
    )?;
    let delay = &characterization.delay;
    let table = DelayTable::from_profile(delay, &candidates)?;
    let start_ps = args.delay_start_ps.unwrap_or_else(|| {
        let max = table.max_delay() as u64;
        let down = max - max % args.delay_step_ps;
        if down == max { max.saturating_sub(args.delay_step_ps) } else { down }
    });
    cfg.delay_start_ps = start_ps.max(wb.psum_bound_ps);
    cfg.delay_step_ps = args.delay_step_ps;
    cfg.delay_floor_ps = wb.psum_bound_ps;
    let delay_outcome = schedule_delay_thresholds(
        &mut net,
        &data,
        &cfg,
        &table,
        args.restarts,
        derive(args.seed, 15),
        power_outcome.baseline_accuracy,
        &protected,
    )?;
    steps.extend(delay_outcome.steps.clone());

    let mut final_selection = match delay_outcome.best {
        Some((_, sel)) => sel,
        None => power_outcome.selection.clone(),
    };
    final_selection.power_threshold_uw = Some(power_outcome.threshold_uw);
    if final_selection.achieved_max_delay_ps.is_none() {
        // Power-only selection: its delay exposure is the candidate max.
        final_selection.achieved_max_delay_ps = Some(table.max_delay() as u64);
    }

    let final_accuracy = net.evaluate(&data, &final_selection)?;
    let final_checkpoint = Checkpoint {
        net: net.materialize(&final_selection)?,
        selection: final_selection,
        accuracy: final_accuracy,
        seed: args.seed,
    };
    let final_estimate = estimate(
        wb,
        &final_checkpoint,
        &data,
        &args.array,
        args.stats_rows,
        power,
        &args.voltage,
        Some(baseline_max),
    )?;

    // Tradeoff rows: baseline, after the power phase, after the delay
    // phase (the last two coincide when the delay phase adopted nothing).
    let mut tradeoff = vec![TradeoffRow {
        phase: "baseline".into(),
        threshold: quantile(&powers, 1.0),
        n_weights: 255,
        n_acts: 256,
        accuracy: power_outcome.baseline_accuracy,
        std_power_uw: baseline_estimate.standard.total_uw,
        opt_power_uw: baseline_estimate.optimized.total_uw,
        voltage_ratio: 1.0,
        scaled_power_uw: baseline_estimate.optimized.total_uw,
    }];
    let ratio = final_estimate.voltage_ratio.unwrap_or(1.0);
    tradeoff.push(TradeoffRow {
        phase: "final".into(),
        threshold: power_outcome.threshold_uw,
        n_weights: final_checkpoint.selection.weights.len(),
        n_acts: final_checkpoint.selection.acts.len(),
        accuracy: final_accuracy,
        std_power_uw: final_estimate.standard.total_uw,
        opt_power_uw: final_estimate.optimized.total_uw,
        voltage_ratio: ratio,
        scaled_power_uw: final_estimate
            .scaled_optimized
            .as_ref()
            .map(|e| e.total_uw)
            .unwrap_or(final_estimate.optimized.total_uw),
    });

    Ok(PipelineOutput {
        baseline,
        baseline_estimate,
        stats: workload.stats,
        characterization,
        power_threshold_uw: power_outcome.threshold_uw,
        final_checkpoint,
        final_estimate,
        steps,
        tradeoff,
    })
}

fn with_seed(array: &ArrayConfig, seed: u64) -> ArrayConfig {
    ArrayConfig { stats_seed: seed, ..array.clone() }
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    sorted[idx]
}
