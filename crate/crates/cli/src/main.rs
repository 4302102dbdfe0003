//! `lmd`: train a small diffusion model on in-domain images and score
//! images as out-of-distribution by how poorly masked copies inpaint back.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lmd_core::detector::Lift;
use lmd_core::masking::MaskSpec;
use lmd_core::metrics::DistanceMetric;

use commands::Axis;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "lmd",
    version,
    about = "Unsupervised out-of-distribution detection by masked diffusion inpainting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; unspecified fields take defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "lmd-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LiftArg {
    Inpaint,
    Denoise,
}

#[derive(Args, Clone)]
struct DetectorFlags {
    /// Model checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Reconstruction attempts per image.
    #[arg(long)]
    attempts: Option<usize>,
    /// alternating:N, fixed:N, center, or random:N[:cover].
    #[arg(long)]
    mask: Option<MaskSpec>,
    /// mse, ssim_distance, or feature_distance.
    #[arg(long)]
    metric: Option<DistanceMetric>,
    #[arg(long, value_enum)]
    lift: Option<LiftArg>,
    /// Scoring threads.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the noise-prediction model on `in_train`.
    Train(Common),
    /// Score `in_test` and `out_test` with a trained checkpoint.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        detector: DetectorFlags,
    },
    /// ROC-AUC of two score CSVs (out-of-domain scores as positives).
    Eval {
        #[command(flatten)]
        common: Common,
        in_csv: PathBuf,
        out_csv: PathBuf,
    },
    /// Sweep one detector setting, reusing one checkpoint.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        detector: DetectorFlags,
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Draw unconditional samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_detector_flags(cfg: &mut ExperimentConfig, flags: &DetectorFlags) {
    let d = &mut cfg.detector;
    if let Some(path) = &flags.checkpoint {
        cfg.checkpoint = Some(path.clone());
    }
    if let Some(r) = flags.attempts {
        d.attempts = r;
    }
    if let Some(m) = flags.mask {
        d.mask = m;
    }
    if let Some(m) = flags.metric {
        d.metric = m;
    }
    if let Some(w) = flags.workers {
        d.workers = w;
    }
    match (flags.lift, d.lift) {
        (Some(LiftArg::Inpaint), _) => d.lift = Lift::MaskInpaint,
        (Some(LiftArg::Denoise), Lift::MaskInpaint) => d.lift = Lift::DiffuseDenoise { t_star: None },
        _ => {}
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = base_config(&common)?.resolve()?;
            commands::cmd_train(&cfg, &common.out)
        }
        Command::Score { common, detector } => {
            let mut cfg = base_config(&common)?;
            apply_detector_flags(&mut cfg, &detector);
            commands::cmd_score(&cfg.resolve()?, &common.out)
        }
        Command::Eval {
            common,
            in_csv,
            out_csv,
        } => commands::cmd_eval(&in_csv, &out_csv, &common.out).map(|_| ()),
        Command::Ablate { common, detector, axis } => {
            let mut cfg = base_config(&common)?;
            apply_detector_flags(&mut cfg, &detector);
            commands::cmd_ablate(&cfg.resolve()?, axis, &common.out)
        }
        Command::Sample {
            common,
            checkpoint,
            count,
        } => {
            let mut cfg = base_config(&common)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if let Some(n) = count {
                cfg.samples = n;
            }
            commands::cmd_sample(&cfg.resolve()?, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
