//! `bsdn`: corrupt, train, denoise, probe-rf and eval subcommands.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use blindspot::{Error, NoiseModel};

pub use commands::run;
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "bsdn", version, about = "Self-supervised blind-spot image denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedural texture images (clean test data).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// 1 for grayscale, 3 for RGB.
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Corrupt every PNG in a directory with synthetic noise.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// gaussian:SIGMA | gaussian-range:LO,HI | poisson:LAMBDA (sigma in 0-255 units)
        #[arg(long, value_parser = parse_noise)]
        noise: NoiseModel,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a directory of PNGs. Every step draws fresh noise from the
    /// config's noise model; only the noisy patches reach the loss.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key = value file with network and training settings
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; the loss log and manifest are written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `steps` from the config.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Denoise every PNG in a directory.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Gaussian noise std in 0-255 units.
        #[arg(long, required_unless_present = "lambda", conflicts_with = "lambda", allow_negative_numbers = true)]
        sigma: Option<f64>,
        /// Poisson rate; the noise std is approximated from the noisy value.
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Output the predicted mean, ignoring the noisy value.
        #[arg(long)]
        mean_only: bool,
    },
    /// Measure the receptive field with a gradient probe.
    ProbeRf {
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of random parameter (or input) seeds to average.
        #[arg(long, default_value_t = 8)]
        seeds: u64,
    },
    /// Corrupt clean images at several noise levels and report PSNRs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        /// Comma-separated test sigmas in 0-255 units.
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        /// CSV path; the manifest is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// 1 usage, 2 data, 3 numerical.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config { .. } | Error::Parameter(_) => 1,
        Error::Numerical(_) | Error::NonFiniteLoss { .. } => 3,
        Error::Dimension(_)
        | Error::Input(_)
        | Error::Checkpoint(_)
        | Error::Io { .. }
        | Error::Image { .. } => 2,
    }
}
