//! `dimosr`: dataset ingestion, training, evaluation, inference, model
//! inspection and gradient checking.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const LOG_ENV: &str = "DIMOSR_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "dimosr",
    version,
    about = "Lightweight image super-resolution with dilated modulation blocks",
    after_help = "Config values can be overridden with --section.key VALUE, e.g.\n  \
                  dimosr train --preset toy --model.enable-attention false --train.lambda 0\n\n\
                  Log verbosity comes from DIMOSR_LOG (error, warn, info, debug, trace; default info)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the run configuration comes from.
#[derive(Debug, Args)]
struct ConfigSource {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: dimosr, dimosr-s or toy.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hash a directory of HR PNGs and write LR counterparts plus a manifest.
    Ingest {
        /// Directory scanned recursively for PNG files.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        scale: usize,
        /// Receives manifest.json and lr_x<scale>/.
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the manifest for shuffling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network; needs paths.train_manifest and paths.output_dir.
    Train {
        #[command(flatten)]
        source: ConfigSource,
    },
    /// Score super-resolved images against a manifest's HR images.
    Eval {
        /// Manifest of the HR/LR pairs to score.
        #[arg(long)]
        manifest: PathBuf,
        /// Network to run on each LR image.
        #[arg(long, required_unless_present_any = ["sr", "bicubic"], conflicts_with_all = ["sr", "bicubic"])]
        checkpoint: Option<PathBuf>,
        /// Directory of precomputed SR images laid out like the manifest.
        #[arg(long, conflicts_with = "bicubic")]
        sr: Option<PathBuf>,
        /// Score plain bicubic upsampling instead.
        #[arg(long)]
        bicubic: bool,
        /// Pixels cropped from each edge (default: the scale factor).
        #[arg(long)]
        border_crop: Option<usize>,
        /// Score all RGB channels instead of luma.
        #[arg(long)]
        rgb: bool,
        /// Print the results as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Super-resolve one PNG.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Report parameter and FLOP counts and the layer table.
    Inspect {
        /// Inspect a checkpoint instead of a config.
        #[arg(long, conflicts_with_all = ["config", "preset"])]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        source: ConfigSource,
        /// Output height used for the FLOP count.
        #[arg(long, default_value_t = 720)]
        height: usize,
        /// Output width used for the FLOP count.
        #[arg(long, default_value_t = 1280)]
        width: usize,
    },
    /// Finite-difference check of every differentiable operation and of
    /// the configured network with its training loss.
    Gradcheck {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampled elements per parameter tensor in the whole-network check.
        #[arg(long, default_value_t = 2)]
        per_tensor: usize,
        /// Only check individual operations and blocks.
        #[arg(long)]
        skip_model: bool,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let (args, overrides) = config::extract_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    let takes_config = matches!(
        cli.command,
        Command::Train { .. } | Command::Gradcheck { .. } | Command::Inspect { checkpoint: None, .. }
    );
    if !overrides.is_empty() && !takes_config {
        anyhow::bail!("this command does not take config overrides");
    }
    let load = |s: &ConfigSource| config::RunConfig::load(s.config.as_deref(), s.preset.as_deref(), &overrides);
    match cli.command {
        Command::Ingest { dir, scale, out, seed } => commands::ingest(&dir, scale, &out, seed),
        Command::Train { source } => {
            if source.config.is_none() && source.preset.is_none() {
                anyhow::bail!("train needs --config or --preset");
            }
            commands::train(&load(&source)?)
        }
        Command::Eval {
            manifest,
            checkpoint,
            sr,
            bicubic,
            border_crop,
            rgb,
            json,
        } => {
            let mode = match (checkpoint, sr) {
                (Some(c), _) => commands::EvalMode::Checkpoint(c),
                (None, Some(d)) => commands::EvalMode::SrDir(d),
                (None, None) if bicubic => commands::EvalMode::Bicubic,
                _ => unreachable!("clap requires one mode"),
            };
            commands::eval(&manifest, mode, border_crop, !rgb, json)
        }
        Command::Infer {
            checkpoint,
            input,
            output,
        } => commands::infer(&checkpoint, &input, &output),
        Command::Inspect {
            checkpoint,
            source,
            height,
            width,
        } => {
            let model = match checkpoint {
                Some(path) => commands::checkpoint_model(&path)?,
                None => load(&source)?.model,
            };
            commands::inspect(&model, height, width)
        }
        Command::Gradcheck {
            source,
            seed,
            per_tensor,
            skip_model,
            json,
        } => commands::gradcheck(&load(&source)?, seed, per_tensor, skip_model, json),
    }
}
