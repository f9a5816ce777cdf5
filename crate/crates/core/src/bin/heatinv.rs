use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatinv::harness::{parse_config, run_scenario, write_reports, Mode};

#[derive(Parser)]
#[command(name = "heatinv", version, about = "Forward heat solves, spectral checks and coefficient reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve u0, fit decay rates and evaluate the lower bounds.
    Forward(RunArgs),
    /// Reconstruct the coefficient from synthetic single-time data.
    Invert(RunArgs),
    /// Min-max sandwich, gap property and perturbation tables.
    VerifySpectral(RunArgs),
    /// Stability ratio and F-Lipschitz tables over the time grid.
    StabilitySweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out/<scenario name>/<mode>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of eigenmodes.
    #[arg(long)]
    modes: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Forward(a) => (Mode::Forward, a),
        Command::Invert(a) => (Mode::Invert, a),
        Command::VerifySpectral(a) => (Mode::VerifySpectral, a),
        Command::StabilitySweep(a) => (Mode::StabilitySweep, a),
    };
    match run(mode, &args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(mode: Mode, args: &RunArgs) -> heatinv::Result<bool> {
    let mut scenario = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(modes) = args.modes {
        scenario.modes = modes;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let artifact = run_scenario(&scenario, mode, base)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name).join(mode.name()));
    let manifest = write_reports(&artifact, &out)?;
    print!("{}", artifact.summary());
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(artifact.all_pass())
}
