//! unpctl: scenario runner for unpredictable-control experiments.
//!
//! Exit codes: 0 success, 2 configuration/schema error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unpctl_core::Error;

use unpctl::commands::{self, RunContext};
use unpctl::config::{config_hash, Scenario};

#[derive(Parser)]
#[command(name = "unpctl", version, about = "Unpredictable-control scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario config (JSON)
    config: PathBuf,
    /// Override noise.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.n_samples
    #[arg(long)]
    samples: Option<u64>,
    /// Override run.out_dir
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override noise.monotonicity
    #[arg(long, value_parser = ["literal", "density"])]
    mono: Option<String>,
    /// Override noise.intra_piece
    #[arg(long, value_parser = ["volume", "reppoint"])]
    intra: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimal distribution per alpha; write JSON + SVG
    SolveDist {
        #[command(flatten)]
        common: CommonArgs,
        /// Also dump the assembled linear program as plain text
        #[arg(long)]
        dump_lp: bool,
        /// Also dump N theta/u_e sample pairs per alpha to CSV
        #[arg(long, value_name = "N")]
        dump_samples: Option<u64>,
    },
    /// Monte Carlo comparison table across distributions
    Compare(CommonArgs),
    /// Closed-loop LQR run with and without unpredictable input
    Simulate(CommonArgs),
    /// Five-agent formation run with degradation accounting
    Formation(CommonArgs),
}

fn load_context(args: &CommonArgs) -> Result<RunContext, Error> {
    let raw = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let mut scenario = Scenario::from_json(&raw)?;
    if let Some(seed) = args.seed {
        scenario.noise.seed = seed;
    }
    if let Some(samples) = args.samples {
        scenario.run.n_samples = samples;
    }
    if let Some(dir) = &args.out_dir {
        scenario.run.out_dir = dir.display().to_string();
    }
    if let Some(mono) = &args.mono {
        scenario.noise.monotonicity = match mono.as_str() {
            "literal" => "literal".into(),
            _ => "density".into(),
        };
    }
    if let Some(intra) = &args.intra {
        scenario.noise.intra_piece = intra.clone();
    }
    scenario.validate()?;
    let out_dir = PathBuf::from(&scenario.run.out_dir);
    Ok(RunContext {
        config_hash: config_hash(&raw),
        scenario,
        out_dir,
    })
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::SolveDist {
            common,
            dump_lp,
            dump_samples,
        } => commands::cmd_solve_dist(&load_context(common)?, *dump_lp, *dump_samples),
        Command::Compare(a) => commands::cmd_compare(&load_context(a)?),
        Command::Simulate(a) => commands::cmd_simulate(&load_context(a)?),
        Command::Formation(a) => commands::cmd_formation(&load_context(a)?).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Shape { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
