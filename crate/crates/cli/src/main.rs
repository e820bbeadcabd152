use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cvc_cli::{cmd_run, cmd_trace, cmd_validate_scene, RunOptions, TraceOptions};

#[derive(Parser)]
#[command(
    name = "cvc-sim",
    version,
    about = "Simulated ultrasound-guided central venous catheterization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of a manifest and write per-scenario reports plus summary.csv.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the manifest's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a scene file against every phantom invariant.
    ValidateScene { path: PathBuf },
    /// Run one scenario and export the needle trace and reconstructed centerlines.
    Trace {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run {
            manifest,
            out,
            seed,
            jobs,
        } => cmd_run(&RunOptions {
            manifest,
            out,
            seed,
            jobs,
        }),
        Command::ValidateScene { path } => cmd_validate_scene(&path),
        Command::Trace {
            manifest,
            scenario,
            out,
            seed,
        } => cmd_trace(&TraceOptions {
            manifest,
            scenario,
            out,
            seed,
        }),
    };
    ExitCode::from(code as u8)
}
