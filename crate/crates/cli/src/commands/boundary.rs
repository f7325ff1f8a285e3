use super::{boundary_sweep, sweep_summary, Runner};
use crate::config::{user_specs, BoundarySweepConfig};
use crate::error::Result;
use crate::output::{Artifact, CommandOutput};

/// Slack under which an estimate still counts as an upper bound.
pub const CONTAINMENT_SLACK: f64 = 0.05;

pub fn run(cfg: &BoundarySweepConfig, runner: &Runner) -> Result<CommandOutput> {
    let rows = boundary_sweep(
        user_specs(&cfg.users)?,
        cfg.points,
        cfg.slots,
        cfg.seed,
        cfg.delta0,
        cfg.bandwidth,
        cfg.formulation,
        runner,
    )?;
    let summary = sweep_summary(&rows);
    Ok(CommandOutput {
        command: "boundary-sweep",
        config: serde_json::to_value(cfg)?,
        artifacts: vec![Artifact::csv("boundary.csv", &rows)?],
        summary,
    })
}
