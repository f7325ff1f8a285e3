use mvwo_core::mws::{measure_rates_on, tune_suwo, TieBreak};
use mvwo_core::region::RegionProblem;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{episode_seed, median, Runner};
use crate::config::EstimationCdfConfig;
use crate::error::Result;
use crate::output::{Artifact, CommandOutput};

/// Estimated optimum of user 0 against its rate under tuned SUWO weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationErrorRecord {
    pub episode: usize,
    pub seed: u64,
    pub estimated: f64,
    pub measured: f64,
    /// `(estimated − measured) / measured`.
    pub nu: f64,
}

pub fn episode(cfg: &EstimationCdfConfig, ep: usize) -> Result<EstimationErrorRecord> {
    let seed = episode_seed(cfg.seed, ep);
    let k = cfg.num_users;
    let episode = cfg
        .mean_snr_db
        .episode(k, cfg.fading, cfg.delta0, cfg.bandwidth, cfg.measurement_slots, seed)?;
    let mut channel = episode.channel();
    let suwo = tune_suwo(&mut channel, cfg.gamma, cfg.tuning_slots_per_user * k)?;
    let meas = measure_rates_on(
        &suwo.weights(),
        &mut channel,
        cfg.measurement_slots,
        episode.scale(),
        TieBreak::LowestIndex,
        None,
    )?;
    let problem = RegionProblem::new(&episode.analytic_stats(), cfg.delta0, cfg.bandwidth, cfg.formulation)?;
    let estimated = problem.optimal_rates()?.rates.as_slice()[0];
    let measured = meas.as_slice()[0];
    if measured <= 0.0 {
        return Err(mvwo_core::Error::InvalidInput(format!(
            "episode {ep}: user 0 was never served during measurement"
        ))
        .into());
    }
    Ok(EstimationErrorRecord {
        episode: ep,
        seed,
        estimated,
        measured,
        nu: (estimated - measured) / measured,
    })
}

pub fn run(cfg: &EstimationCdfConfig, runner: &Runner) -> Result<CommandOutput> {
    let eps: Vec<usize> = (0..cfg.episodes).collect();
    let records = runner.map(&eps, |&ep| episode(cfg, ep))?;
    let nus: Vec<f64> = records.iter().map(|r| r.nu).collect();
    let positive = nus.iter().filter(|&&x| x > 0.0).count();
    let summary = json!({
        "episodes": records.len(),
        "fraction_positive": positive as f64 / nus.len() as f64,
        "median_nu": median(nus.clone()),
        "min_nu": nus.iter().copied().fold(f64::INFINITY, f64::min),
        "max_nu": nus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    Ok(CommandOutput {
        command: "estimation-cdf",
        config: serde_json::to_value(cfg)?,
        artifacts: vec![Artifact::csv("estimation.csv", &records)?],
        summary,
    })
}
