//! Deterministic artifact readers/writers.
//!
//! Every artifact is byte-identical across runs with the same seed; the
//! only timestamped file is the `run_meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characterize::{DelayProfile, PowerProfile};
use crate::error::{Error, Result};
use crate::qnn::FixedNet;
use crate::select::Selection;
use crate::workload::{PowerEstimate, WorkloadStats};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Trained model checkpoint: the hardware-form network plus the selection
/// it was trained against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub net: FixedNet,
    pub selection: Selection,
    pub accuracy: f64,
    pub seed: u64,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_json(path, ckpt)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}

pub fn write_stats(path: &Path, stats: &WorkloadStats) -> Result<()> {
    // Compact form: the dense count matrix dominates the size.
    let mut text = serde_json::to_string(stats)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_stats(path: &Path) -> Result<WorkloadStats> {
    read_json(path)
}

pub fn write_power_profile(dir: &Path, profile: &PowerProfile) -> Result<()> {
    let mut csv = Vec::new();
    profile.write_csv(&mut csv)?;
    write_text(&dir.join("power_profile.csv"), std::str::from_utf8(&csv).expect("utf8"))?;
    write_json(&dir.join("power_profile.json"), profile)
}

pub fn read_power_profile(path: &Path) -> Result<PowerProfile> {
    read_json(path)
}

pub fn write_delay_profile(dir: &Path, profile: &DelayProfile) -> Result<()> {
    let mut bin = Vec::new();
    profile.write_binary(&mut bin)?;
    let bin_path = dir.join("delay_profile.bin");
    fs::create_dir_all(dir)?;
    fs::write(&bin_path, &bin)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", bin_path.display()))))?;
    write_json(&dir.join("delay_profile.json"), &profile.summary())?;

    let mut hist = String::from("weight,delay_ps,count\n");
    for (w, d, c) in profile.histogram() {
        hist.push_str(&format!("{w},{d},{c}\n"));
    }
    write_text(&dir.join("delay_hist.csv"), &hist)
}

pub fn read_delay_profile(path: &Path) -> Result<DelayProfile> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    DelayProfile::read_binary(&mut bytes.as_slice())
}

/// One row of the tradeoff sweep (figure data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub phase: String,
    pub threshold: f64,
    pub n_weights: usize,
    pub n_acts: usize,
    pub accuracy: f64,
    pub std_power_uw: f64,
    pub opt_power_uw: f64,
    pub voltage_ratio: f64,
    pub scaled_power_uw: f64,
}

pub fn write_tradeoff(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    let mut text = String::from(
        "phase,threshold,n_weights,n_acts,accuracy,std_power_uW,opt_power_uW,voltage_ratio,scaled_power_uW\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.phase,
            r.threshold,
            r.n_weights,
            r.n_acts,
            r.accuracy,
            r.std_power_uw,
            r.opt_power_uw,
            r.voltage_ratio,
            r.scaled_power_uw
        ));
    }
    write_text(path, &text)
}

pub fn read_tradeoff(path: &Path) -> Result<Vec<TradeoffRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<TradeoffCsvRow>() {
        let r = rec?;
        rows.push(TradeoffRow {
            phase: r.phase,
            threshold: r.threshold,
            n_weights: r.n_weights,
            n_acts: r.n_acts,
            accuracy: r.accuracy,
            std_power_uw: r.std_power_uw,
            opt_power_uw: r.opt_power_uw,
            voltage_ratio: r.voltage_ratio,
            scaled_power_uw: r.scaled_power_uw,
        });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct TradeoffCsvRow {
    phase: String,
    threshold: f64,
    n_weights: usize,
    n_acts: usize,
    accuracy: f64,
    #[serde(rename = "std_power_uW")]
    std_power_uw: f64,
    #[serde(rename = "opt_power_uW")]
    opt_power_uw: f64,
    voltage_ratio: f64,
    #[serde(rename = "scaled_power_uW")]
    scaled_power_uw: f64,
}

/// Power estimates for one model under both hardware modes, with the
/// voltage-scaled variants when a delay reduction is known.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub standard: PowerEstimate,
    pub optimized: PowerEstimate,
    pub delay_reduction_fraction: Option<f64>,
    pub voltage_ratio: Option<f64>,
    pub scaled_standard: Option<PowerEstimate>,
    pub scaled_optimized: Option<PowerEstimate>,
}

pub fn write_estimate(dir: &Path, report: &EstimateReport) -> Result<()> {
    write_json(&dir.join("estimate.json"), report)?;
    let mut text = String::from("mode,dynamic_uW,leakage_uW,total_uW\n");
    let mut push = |name: &str, e: &PowerEstimate| {
        text.push_str(&format!("{name},{},{},{}\n", e.dynamic_uw, e.leakage_uw, e.total_uw));
    };
    push("standard", &report.standard);
    push("optimized", &report.optimized);
    if let Some(e) = &report.scaled_standard {
        push("scaled_standard", e);
    }
    if let Some(e) = &report.scaled_optimized {
        push("scaled_optimized", e);
    }
    write_text(&dir.join("estimate.csv"), &text)
}

/// Timestamped run sidecar; the only artifact allowed to differ between
/// identical runs.
#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub unix_time_secs: u64,
    pub duration_secs: f64,
}

pub fn write_run_meta(dir: &Path, meta: &RunMeta) -> Result<()> {
    write_json(&dir.join("run_meta.json"), meta)
}

/// Parses `all` or a comma-separated weight list.
pub fn parse_weight_list(spec: &str) -> Result<Vec<i8>> {
    if spec == "all" {
        return Ok((-127..=127).collect());
    }
    spec.split(',')
        .map(|s| {
            let w: i16 = s
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad weight `{s}`: {e}")))?;
            if !(-127..=127).contains(&w) {
                return Err(Error::Parse(format!("weight {w} outside -127..=127")));
            }
            Ok(w as i8)
        })
        .collect()
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
