use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mvwo_cli::config::Overrides;
use mvwo_cli::error::{CliError, Result};
use mvwo_cli::Command;

#[derive(Debug, Parser)]
#[command(name = "mvwo", version, about = "Max-weight scheduler weight design experiments")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    /// Worker threads; 0 means all cores.
    #[arg(long)]
    parallel: Option<usize>,
}

fn run(args: &Args) -> Result<()> {
    let config = match &args.config {
        Some(p) => Some(serde_json::from_slice(&std::fs::read(p)?)?),
        None => None,
    };
    let overrides = Overrides {
        seed: args.seed,
        episodes: args.episodes,
        slots: args.slots,
    };
    let output = mvwo_cli::run(args.command, config, &overrides, args.parallel)?;
    for p in output.write_to(&args.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn report(e: &CliError) {
    eprintln!("{}", e.to_json());
}
