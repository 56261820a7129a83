//! Command-line driver: dataset generation, training, sampling,
//! postprocessing and analysis, all communicating through files under one
//! run directory.

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guideflow::{Error, Result};

use crate::commands::{GapArgs, NnTableArgs, SampleArgs, TrainArgs, TrainTarget};
use crate::config::RunConfig;

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Training { .. } | Error::Integration { .. } => 4,
    }
}

#[derive(Debug, Parser)]
#[command(name = "guideflow", version, about = "Guided diffusion sampling and flow postprocessing on toy data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file (`key = value` lines under `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory; overrides `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override any config key, e.g. `--set denoiser.steps=2000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    DenoiserCond,
    DenoiserUncond,
    DenoiserCfg,
    Classifier,
    Flow,
}

impl From<TargetArg> for TrainTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::DenoiserCond => TrainTarget::DenoiserCond,
            TargetArg::DenoiserUncond => TrainTarget::DenoiserUncond,
            TargetArg::DenoiserCfg => TrainTarget::DenoiserCfg,
            TargetArg::Classifier => TrainTarget::Classifier,
            TargetArg::Flow => TrainTarget::Flow,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the training dataset into `data/train.csv`.
    GenData,
    /// Train a model into `ckpt/<name>.ckpt`.
    Train {
        target: TargetArg,
        /// Real training data (default `data/train.csv`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generated samples for flow training; several need `flow.one_for_all`.
        #[arg(long)]
        samples: Vec<PathBuf>,
        /// Checkpoint name (default: the target, or `flow-k<k>`).
        #[arg(long)]
        name: Option<String>,
    },
    /// Draw `n` samples per class.
    Sample {
        /// vanilla, cg or cfg; overrides `sample.mode`.
        #[arg(long)]
        mode: Option<String>,
        /// Guidance scale; overrides `sample.scale`.
        #[arg(long)]
        scale: Option<f64>,
        /// Chains per class; overrides `sample.n`.
        #[arg(long)]
        n: Option<usize>,
        /// Also write every chain's states to `<stem>_traj.csv`.
        #[arg(long)]
        trajectories: bool,
        /// Read initial states and step noise from this bank file.
        #[arg(long)]
        noise_bank: Option<PathBuf>,
        /// Write the bank used to `<stem>.bank`.
        #[arg(long)]
        save_noise_bank: bool,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Output file (default `samples/<mode>_w<scale>.csv`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Move samples along a trained flow.
    Postprocess {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a report under `reports/`.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
        /// Also write per-figure CSVs under `reports/plot/`.
        #[arg(long, global = true)]
        emit_plot_data: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeKind {
    /// Per-step gap between vanilla conditional and unit-scale classifier-guided sampling.
    Gap {
        #[arg(long)]
        vanilla: Option<PathBuf>,
        #[arg(long)]
        uncond: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Distances of trajectories to the class boundary.
    Boundary {
        #[arg(long, required = true)]
        trajectories: Vec<PathBuf>,
    },
    /// Nearest-neighbor distances before and after postprocessing.
    NnTable {
        /// One file per entry of `analysis.scales`, in order.
        #[arg(long, required = true)]
        samples: Vec<PathBuf>,
        /// One flow per samples file, or one shared flow.
        #[arg(long, required = true)]
        flow_nearest: Vec<PathBuf>,
        #[arg(long, required = true)]
        flow_topk: Vec<PathBuf>,
        #[arg(long)]
        real: Option<PathBuf>,
    },
}

fn build_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        cfg.set("run.seed", &s.to_string())?;
    }
    if let Some(o) = &common.out {
        cfg.set("run.out", &o.to_string_lossy())?;
    }
    Ok(cfg)
}

/// Execute a parsed command line, returning the files written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = build_config(&cli.common)?;
    match cli.command {
        Command::GenData => Ok(vec![commands::gen_data(&cfg)?]),
        Command::Train {
            target,
            data,
            samples,
            name,
        } => Ok(vec![commands::train(&cfg, target.into(), &TrainArgs { data, samples, name })?]),
        Command::Sample {
            mode,
            scale,
            n,
            trajectories,
            noise_bank,
            save_noise_bank,
            denoiser,
            classifier,
            output,
        } => {
            if let Some(m) = mode {
                cfg.set("sample.mode", &m)?;
            }
            if let Some(s) = scale {
                cfg.set("sample.scale", &s.to_string())?;
            }
            if let Some(n) = n {
                cfg.set("sample.n", &n.to_string())?;
            }
            let out = commands::sample(
                &cfg,
                &SampleArgs {
                    denoiser,
                    classifier,
                    noise_bank,
                    save_noise_bank,
                    trajectories,
                    output,
                },
            )?;
            Ok(std::iter::once(out.samples).chain(out.trajectories).chain(out.bank).collect())
        }
        Command::Postprocess { samples, flow, output } => {
            Ok(vec![commands::postprocess_cmd(&cfg, &samples, &flow, output)?])
        }
        Command::Analyze { kind, emit_plot_data } => match kind {
            AnalyzeKind::Gap {
                vanilla,
                uncond,
                classifier,
            } => commands::analyze_gap(
                &cfg,
                &GapArgs {
                    vanilla,
                    uncond,
                    classifier,
                },
                emit_plot_data,
            ),
            AnalyzeKind::Boundary { trajectories } => commands::analyze_boundary(&cfg, &trajectories, emit_plot_data),
            AnalyzeKind::NnTable {
                samples,
                flow_nearest,
                flow_topk,
                real,
            } => commands::analyze_nn_table(
                &cfg,
                &NnTableArgs {
                    samples,
                    flow_nearest,
                    flow_topk,
                    real,
                },
                emit_plot_data,
            ),
        },
    }
}
