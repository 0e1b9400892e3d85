//! `cryoscope`: configuration-driven front end for sweep simulation,
//! step-response calibration, loop verification, chirp analysis and
//! coherence fits.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::RunContext;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "cryoscope", version, about = "Pulse-distortion cryoscopy toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a spectroscopy map over plateau times and amplitudes.
    SimulateDaps(Common),
    /// Fit a map, reconstruct the step response and design an inverse FIR.
    Calibrate(Common),
    /// Report ripple, settling time and first-sample overshoot of a loop.
    VerifyLoop(Common),
    /// Spectrogram, Radon projection and sliding-window fits of a trace.
    Chirp(Common),
    /// Coherence curves under 1/f noise and their Gaussian decay rates.
    NoiseKappa(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

type CommandFn = fn(&RunContext) -> Result<Vec<PathBuf>>;

fn run(cli: Cli) -> Result<()> {
    let (common, f): (&Common, CommandFn) = match &cli.command {
        Command::SimulateDaps(c) => (c, commands::simulate_daps),
        Command::Calibrate(c) => (c, commands::calibrate),
        Command::VerifyLoop(c) => (c, commands::verify_loop),
        Command::Chirp(c) => (c, commands::chirp),
        Command::NoiseKappa(c) => (c, commands::noise_kappa),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let cfg = RunConfig::load(&common.config)?;
    let ctx = RunContext::new(cfg, &common.config, common.out.clone(), common.seed);
    for path in f(&ctx)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
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
