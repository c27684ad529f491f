//! Command-line front end.
//!
//! One binary, six subcommands (characterize, select, train, estimate,
//! report, pipeline). All randomness flows from `--seed`; `--jobs`
//! controls the worker pool without changing any output byte. Exit codes:
//! 0 success, 2 I/O or configuration, 3 infeasible selection, 4 numeric
//! failure.

pub mod artifacts;
pub mod ops;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::characterize::PowerProfile;
use crate::error::{Error, Result};
use crate::netlist::{cell_library_from_json, CellLibrary};
use crate::qnn::{DataFormat, TrainConfig};
use crate::select::{Protected, Selection, VoltageModel};
use crate::workload::ArrayConfig;

use artifacts as art;
use ops::{derive, DatasetSource, Workbench};

#[derive(Parser)]
#[command(
    name = "macprune",
    about = "MAC-unit power/timing characterization and weight/activation value selection",
    version
)]
struct Cli {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads (0 = all cores). Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Output directory for artifacts.
    #[arg(long, global = true, env = "MACPRUNE_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,

    /// Cell library as a flat JSON parameter map.
    #[arg(long, global = true)]
    cell_lib: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset path (idx image file or csv); synthetic blobs when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Dataset format.
    #[arg(long, value_parser = ["idx", "csv"], default_value = "idx")]
    format: String,

    /// Synthetic dataset size.
    #[arg(long, default_value_t = 10_000)]
    synth_samples: usize,

    /// Synthetic feature dimensionality.
    #[arg(long, default_value_t = 784)]
    synth_dims: usize,

    /// Synthetic class count.
    #[arg(long, default_value_t = 10)]
    synth_classes: usize,
}

impl DataArgs {
    fn source(&self) -> Result<DatasetSource> {
        Ok(match &self.dataset {
            Some(path) => DatasetSource::File {
                path: path.clone(),
                format: match self.format.as_str() {
                    "idx" => DataFormat::Idx,
                    "csv" => DataFormat::Csv,
                    other => return Err(Error::Config(format!("unknown format {other}"))),
                },
            },
            None => DatasetSource::Synthetic {
                n: self.synth_samples,
                dims: self.synth_dims,
                classes: self.synth_classes,
            },
        })
    }
}

#[derive(Args, Clone)]
struct ArrayArgs {
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Rows of the dataset streamed for statistics/estimates.
    #[arg(long, default_value_t = 512)]
    stats_rows: usize,
}

impl ArrayArgs {
    fn config(&self, lib: &CellLibrary, seed: u64) -> ArrayConfig {
        ArrayConfig {
            rows: self.rows,
            cols: self.cols,
            clock_period_ps: lib.clock_period_ps,
            stats_seed: seed,
            ..ArrayConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-weight power and delay profiles (figure data included).
    Characterize {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        array: ArrayArgs,
        /// Combined transitions sampled per weight.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Partial-sum bin count.
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Weights to characterize: `all` or a comma list.
        #[arg(long, default_value = "all")]
        weights: String,
        /// Weights for the 65,536-transition delay analysis; defaults to
        /// `--weights`.
        #[arg(long)]
        delay_weights: Option<String>,
        /// Reuse previously written workload statistics.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Epochs for the workload model behind the statistics.
        #[arg(long, default_value_t = 3)]
        workload_epochs: usize,
        /// Hidden width of the workload model.
        #[arg(long, default_value_t = 128)]
        hidden: usize,
    },

    /// Weight set by power threshold, optionally pruned to a delay
    /// threshold with randomized restarts.
    Select {
        /// power_profile.json from `characterize`.
        #[arg(long)]
        power_profile: PathBuf,
        /// delay_profile.bin from `characterize`.
        #[arg(long)]
        delay_profile: PathBuf,
        #[arg(long)]
        power_threshold: f64,
        #[arg(long)]
        delay_threshold: Option<u64>,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        /// Drop the default protection of weight 0 / activation 0.
        #[arg(long)]
        unprotected: bool,
    },

    /// Train a restricted quantized model against a selection.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// selection.json; full value sets when absent.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f32,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        /// Snap weight codes with |w| <= this to zero before training.
        #[arg(long)]
        prune_magnitude: Option<u8>,
    },

    /// Array-level power of a checkpoint under both hardware models.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        array: ArrayArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        power_profile: PathBuf,
        /// Unrestricted maximum MAC delay (ps) for voltage scaling.
        #[arg(long)]
        baseline_delay: Option<u64>,
        /// Voltage model JSON (anchors + exponents).
        #[arg(long)]
        voltage_model: Option<PathBuf>,
    },

    /// Accuracy/power tradeoff sweep over threshold lists.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        array: ArrayArgs,
        #[arg(long)]
        power_profile: PathBuf,
        #[arg(long)]
        delay_profile: PathBuf,
        /// Comma-separated power thresholds (µW).
        #[arg(long, value_delimiter = ',')]
        power_thresholds: Vec<f64>,
        /// Comma-separated delay thresholds (ps).
        #[arg(long, value_delimiter = ',')]
        delay_thresholds: Vec<u64>,
        #[arg(long, default_value_t = 4)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
    },

    /// Full flow: characterize, select, retrain, estimate, report.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        array: ArrayArgs,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, default_value_t = 6)]
        baseline_epochs: usize,
        #[arg(long, default_value_t = 2)]
        retrain_epochs: usize,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        /// Starting power threshold (µW); derived from the profile when
        /// absent.
        #[arg(long)]
        power_start: Option<f64>,
        /// Power threshold decrement (µW); start..floor in 8 steps when
        /// absent.
        #[arg(long)]
        power_step: Option<f64>,
        #[arg(long)]
        power_floor: Option<f64>,
        /// Starting delay threshold (ps); just below the measured maximum
        /// when absent.
        #[arg(long)]
        delay_start: Option<u64>,
        #[arg(long, default_value_t = 10)]
        delay_step: u64,
        #[arg(long, default_value_t = 2)]
        prune_magnitude: u8,
    },
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let started = Instant::now();
    match run(&cli) {
        Ok(()) => {
            let meta = art::RunMeta {
                command: std::env::args().skip(1).collect::<Vec<_>>().join(" "),
                seed: cli.seed,
                jobs: cli.jobs,
                unix_time_secs: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                duration_secs: started.elapsed().as_secs_f64(),
            };
            if let Err(e) = art::write_run_meta(&cli.out_dir, &meta) {
                eprintln!("warning: could not write run_meta.json: {e}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn load_library(cli: &Cli) -> Result<CellLibrary> {
    match &cli.cell_lib {
        None => Ok(CellLibrary::default()),
        Some(path) => cell_library_from_json(&art::read_text(path)?),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = &cli.out_dir;
    let lib = load_library(cli)?;
    match &cli.command {
        Command::Characterize {
            data,
            array,
            samples,
            bins,
            weights,
            delay_weights,
            stats,
            workload_epochs,
            hidden,
        } => {
            let wb = Workbench::new(lib)?;
            art::write_text(&out.join("mac_netlist.json"), &wb.mac.netlist.to_json())?;
            let stats = match stats {
                Some(path) => art::read_stats(path)?,
                None => {
                    let dataset = data.source()?.load(derive(cli.seed, 10))?;
                    let workload = ops::build_workload(
                        &dataset,
                        &ops::WorkloadArgs {
                            array: array.config(&wb.lib, derive(cli.seed, 11)),
                            hidden: *hidden,
                            epochs: *workload_epochs,
                            stats_rows: array.stats_rows,
                            seed: derive(cli.seed, 12),
                        },
                    )?;
                    println!(
                        "workload model accuracy {:.4} over {} stats rows",
                        workload.accuracy, array.stats_rows
                    );
                    workload.stats
                }
            };
            art::write_stats(&out.join("stats.json"), &stats)?;
            let chars = ops::characterize(
                &wb,
                &stats,
                &ops::CharacterizeArgs {
                    n_samples: *samples,
                    bins: *bins,
                    bin_member_cap: 4096,
                    weights: art::parse_weight_list(weights)?,
                    delay_weights: match delay_weights {
                        Some(spec) => art::parse_weight_list(spec)?,
                        None => Vec::new(),
                    },
                    seed: derive(cli.seed, 13),
                },
            )?;
            art::write_power_profile(out, &chars.power)?;
            art::write_delay_profile(out, &chars.delay)?;
            let (w_min, p_min) = chars.power.min_weight();
            println!(
                "characterized {} weights: min power {p_min:.3} uW at weight {w_min}, \
                 max delay {} ps (psum bound {} ps)",
                chars.power.n_characterized(),
                chars.delay.global_max_ps,
                chars.delay.psum_bound_ps
            );
            Ok(())
        }

        Command::Select {
            power_profile,
            delay_profile,
            power_threshold,
            delay_threshold,
            restarts,
            unprotected,
        } => {
            let power = art::read_power_profile(power_profile)?;
            let delay = art::read_delay_profile(delay_profile)?;
            let protected = if *unprotected { Protected::none() } else { Protected::default() };
            let selection = ops::select(
                &power,
                &delay,
                *power_threshold,
                *delay_threshold,
                *restarts,
                derive(cli.seed, 20),
                &protected,
            )?;
            art::write_text(&out.join("selection.json"), &selection.to_json())?;
            println!(
                "selected {} weights / {} activations (achieved max delay {:?} ps)",
                selection.weights.len(),
                selection.acts.len(),
                selection.achieved_max_delay_ps
            );
            Ok(())
        }

        Command::Train {
            data,
            selection,
            epochs,
            batch_size,
            learning_rate,
            hidden,
            prune_magnitude,
        } => {
            let dataset = data.source()?.load(derive(cli.seed, 10))?;
            let selection = match selection {
                Some(path) => Selection::from_json(&art::read_text(path)?)?,
                None => Selection::full(),
            };
            let cfg = TrainConfig {
                epochs: *epochs,
                batch_size: *batch_size,
                learning_rate: *learning_rate,
                seed: derive(cli.seed, 21),
                prune_magnitude: *prune_magnitude,
                ..TrainConfig::default()
            };
            let (ckpt, history) =
                ops::train_restricted(&dataset, &selection, &ops::TrainArgs { hidden: *hidden, cfg })?;
            art::write_checkpoint(&out.join("checkpoint.json"), &ckpt)?;
            let mut log = String::from("phase,threshold,epoch,loss,accuracy\n");
            for h in &history {
                log.push_str(&format!("train,0,{},{},{}\n", h.epoch, h.loss, h.accuracy));
            }
            art::write_text(&out.join("train_log.csv"), &log)?;
            println!("trained: accuracy {:.4}", ckpt.accuracy);
            Ok(())
        }

        Command::Estimate {
            data,
            array,
            checkpoint,
            power_profile,
            baseline_delay,
            voltage_model,
        } => {
            let wb = Workbench::new(lib)?;
            let ckpt = art::read_checkpoint(checkpoint)?;
            let power: PowerProfile = art::read_power_profile(power_profile)?;
            let dataset = data.source()?.load(derive(cli.seed, 10))?;
            let voltage = match voltage_model {
                Some(path) => art::read_json::<VoltageModel>(path)?,
                None => VoltageModel::default(),
            };
            voltage.validate()?;
            let report = ops::estimate(
                &wb,
                &ckpt,
                &dataset,
                &array.config(&wb.lib, derive(cli.seed, 22)),
                array.stats_rows,
                &power,
                &voltage,
                *baseline_delay,
            )?;
            art::write_estimate(out, &report)?;
            println!(
                "standard {:.2} uW, optimized {:.2} uW{}",
                report.standard.total_uw,
                report.optimized.total_uw,
                report
                    .voltage_ratio
                    .map(|r| format!(", voltage ratio {r:.4}"))
                    .unwrap_or_default()
            );
            Ok(())
        }

        Command::Report {
            data,
            array,
            power_profile,
            delay_profile,
            power_thresholds,
            delay_thresholds,
            epochs,
            hidden,
            restarts,
        } => {
            let wb = Workbench::new(lib)?;
            let power = art::read_power_profile(power_profile)?;
            let delay = art::read_delay_profile(delay_profile)?;
            let dataset = data.source()?.load(derive(cli.seed, 10))?;
            let rows = ops::report_sweep(
                &wb,
                &dataset,
                &power,
                &delay,
                power_thresholds,
                delay_thresholds,
                &array.config(&wb.lib, derive(cli.seed, 23)),
                array.stats_rows,
                &ops::TrainArgs {
                    hidden: *hidden,
                    cfg: TrainConfig {
                        epochs: *epochs,
                        seed: derive(cli.seed, 24),
                        ..TrainConfig::default()
                    },
                },
                *restarts,
                &VoltageModel::default(),
                &Protected::default(),
            )?;
            art::write_tradeoff(&out.join("tradeoff.csv"), &rows)?;
            println!("wrote {} tradeoff rows", rows.len());
            Ok(())
        }

        Command::Pipeline {
            data,
            array,
            samples,
            bins,
            restarts,
            baseline_epochs,
            retrain_epochs,
            hidden,
            power_start,
            power_step,
            power_floor,
            delay_start,
            delay_step,
            prune_magnitude,
        } => {
            let wb = Workbench::new(lib)?;
            let args = ops::PipelineArgs {
                data: data.source()?,
                array: array.config(&wb.lib, derive(cli.seed, 11)),
                hidden: *hidden,
                baseline_epochs: *baseline_epochs,
                retrain_epochs: *retrain_epochs,
                stats_rows: array.stats_rows,
                n_samples: *samples,
                bins: *bins,
                bin_member_cap: 4096,
                restarts: *restarts,
                seed: cli.seed,
                power_start_uw: *power_start,
                power_step_uw: *power_step,
                power_floor_uw: *power_floor,
                delay_start_ps: *delay_start,
                delay_step_ps: *delay_step,
                voltage: VoltageModel::default(),
                prune_magnitude: Some(*prune_magnitude),
            };
            let result = ops::pipeline(&wb, &args)?;

            art::write_text(&out.join("mac_netlist.json"), &wb.mac.netlist.to_json())?;
            art::write_stats(&out.join("stats.json"), &result.stats)?;
            art::write_power_profile(out, &result.characterization.power)?;
            art::write_delay_profile(out, &result.characterization.delay)?;
            art::write_text(
                &out.join("selection.json"),
                &result.final_checkpoint.selection.to_json(),
            )?;
            art::write_checkpoint(&out.join("checkpoint.json"), &result.final_checkpoint)?;
            art::write_json(&out.join("baseline_estimate.json"), &result.baseline_estimate)?;
            art::write_estimate(out, &result.final_estimate)?;
            art::write_tradeoff(&out.join("tradeoff.csv"), &result.tradeoff)?;
            let mut log = String::from("phase,threshold,epoch,loss,accuracy\n");
            for s in &result.steps {
                log.push_str(&format!(
                    "{},{},-,-,{}\n",
                    s.phase, s.threshold, s.accuracy
                ));
            }
            art::write_text(&out.join("train_log.csv"), &log)?;

            let base = result.baseline_estimate.optimized.total_uw;
            let fin = result
                .final_estimate
                .scaled_optimized
                .as_ref()
                .map(|e| e.total_uw)
                .unwrap_or(result.final_estimate.optimized.total_uw);
            println!(
                "baseline accuracy {:.4} -> final {:.4}; optimized power {:.2} -> {:.2} uW \
                 ({:.1}% reduction); {} weights / {} activations kept",
                result.baseline.accuracy,
                result.final_checkpoint.accuracy,
                base,
                fin,
                100.0 * (base - fin) / base.max(1e-12),
                result.final_checkpoint.selection.weights.len(),
                result.final_checkpoint.selection.acts.len(),
            );
            Ok(())
        }
    }
}
