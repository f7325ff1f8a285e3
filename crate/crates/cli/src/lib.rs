//! Experiment runner: each subcommand reads an optional JSON config, runs a
//! seeded experiment and writes CSV series plus a JSON sidecar.

// `!(x >= lo)` is the NaN-rejecting form used by config validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use clap::ValueEnum;

use crate::commands::Runner;
use crate::config::{
    BoundarySweepConfig, BudgetComparisonConfig, CommandConfig, ConvergenceConfig, EstimationCdfConfig,
    OnlineCommandConfig, Overrides, VarianceSweepConfig,
};
use crate::error::Result;
use crate::output::CommandOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    BoundarySweep,
    EstimationCdf,
    Convergence,
    BudgetComparison,
    Online,
    VarianceSweep,
}

/// Resolves the config and runs `command`. `parallel` of `None` uses every core.
pub fn run(
    command: Command,
    config: Option<serde_json::Value>,
    overrides: &Overrides,
    parallel: Option<usize>,
) -> Result<CommandOutput> {
    let runner = Runner::new(parallel)?;
    match command {
        Command::BoundarySweep => commands::boundary::run(&BoundarySweepConfig::resolve(config, overrides)?, &runner),
        Command::EstimationCdf => commands::estimation::run(&EstimationCdfConfig::resolve(config, overrides)?, &runner),
        Command::Convergence => commands::convergence::run(&ConvergenceConfig::resolve(config, overrides)?, &runner),
        Command::BudgetComparison => {
            commands::budget::run(&BudgetComparisonConfig::resolve(config, overrides)?, &runner)
        }
        Command::Online => commands::online::run(&OnlineCommandConfig::resolve(config, overrides)?, &runner),
        Command::VarianceSweep => commands::variance::run(&VarianceSweepConfig::resolve(config, overrides)?, &runner),
    }
}
