use mvwo_core::channel::{Fading, UserChannelSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::boundary::CONTAINMENT_SLACK;
use super::{boundary_sweep, pooled_gaps, Runner, SweepRow};
use crate::config::VarianceSweepConfig;
use crate::error::Result;
use crate::output::{Artifact, CommandOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub sigma: f64,
    pub index: usize,
    pub w1: f64,
    pub w2: f64,
    pub est_1: f64,
    pub est_2: f64,
    pub meas_1: f64,
    pub meas_2: f64,
    pub gap_1: f64,
    pub gap_2: f64,
}

impl VarianceRow {
    fn new(sigma: f64, p: SweepRow) -> Self {
        Self {
            sigma,
            index: p.index,
            w1: p.w1,
            w2: p.w2,
            est_1: p.est_1,
            est_2: p.est_2,
            meas_1: p.meas_1,
            meas_2: p.meas_2,
            gap_1: p.gap_1,
            gap_2: p.gap_2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub sigma: f64,
    /// Mean over both users of the pooled coordinate gap.
    pub mean_gap: f64,
    pub pooled_gap_1: f64,
    pub pooled_gap_2: f64,
    /// Pointwise; infinite when a user is never served at some weight.
    pub max_abs_gap: f64,
    pub contained_fraction: f64,
}

pub fn run(cfg: &VarianceSweepConfig, runner: &Runner) -> Result<CommandOutput> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &sigma in &cfg.sigmas {
        let fading = Fading::Lognormal { sigma };
        let users = vec![
            UserChannelSpec::new(0, cfg.mean_snr, fading)?,
            UserChannelSpec::new(1, cfg.mean_snr, fading)?,
        ];
        let sweep = boundary_sweep(
            users,
            cfg.points,
            cfg.slots,
            cfg.seed,
            cfg.delta0,
            cfg.bandwidth,
            cfg.formulation,
            runner,
        )?;
        let pooled = pooled_gaps(&sweep);
        summaries.push(SigmaSummary {
            sigma,
            mean_gap: 0.5 * (pooled[0] + pooled[1]),
            pooled_gap_1: pooled[0],
            pooled_gap_2: pooled[1],
            max_abs_gap: sweep.iter().flat_map(|r| r.gaps()).map(f64::abs).fold(0.0, f64::max),
            contained_fraction: sweep.iter().filter(|r| r.contained(CONTAINMENT_SLACK)).count() as f64
                / sweep.len() as f64,
        });
        rows.extend(sweep.into_iter().map(|p| VarianceRow::new(sigma, p)));
    }
    let monotone = summaries.windows(2).all(|p| p[0].mean_gap <= p[1].mean_gap);
    let summary = json!({ "sigmas": summaries, "mean_gap_nondecreasing": monotone });
    Ok(CommandOutput {
        command: "variance-sweep",
        config: serde_json::to_value(cfg)?,
        artifacts: vec![
            Artifact::csv("variance_boundary.csv", &rows)?,
            Artifact::csv("variance_summary.csv", &summaries)?,
        ],
        summary,
    })
}
