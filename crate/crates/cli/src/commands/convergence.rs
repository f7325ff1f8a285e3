use mvwo_core::channel::{db_to_linear, Episode, Fading, UserChannelSpec};
use mvwo_core::solver::{solve_weights, MvwoConfig, SolverTrace};
use mvwo_core::stats::SnrStats;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{episode_seed, Runner};
use crate::config::ConvergenceConfig;
use crate::error::Result;
use crate::output::{Artifact, CommandOutput};

/// Statistics of `k` users with `m_j = (j + 5)` dB, `j = 1..=k`.
pub fn staircase_stats(k: usize, fading: Fading) -> Result<SnrStats> {
    let users = (0..k)
        .map(|j| UserChannelSpec::new(j, db_to_linear(j as f64 + 6.0), fading))
        .collect::<mvwo_core::Result<Vec<_>>>()?;
    Ok(Episode::new(users, 1.0, 1.0, 0, 0)?.analytic_stats())
}

pub fn trace(k: usize, cfg: &ConvergenceConfig) -> Result<SolverTrace> {
    let stats = staircase_stats(k, cfg.fading)?;
    let mcfg = MvwoConfig {
        epsilon_hat: cfg.trace_epsilon_hat,
        max_iterations: Some(cfg.trace_max_iterations),
        record_trace: true,
        formulation: cfg.formulation,
    };
    Ok(solve_weights(&stats, 1.0, 1.0, &mcfg)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRecord {
    pub num_users: usize,
    pub epsilon_hat: f64,
    pub episode: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySummary {
    pub num_users: usize,
    pub epsilon_hat: f64,
    pub episodes: usize,
    pub converged_fraction: f64,
    pub mean_iterations: f64,
}

pub fn probability_episode(
    cfg: &ConvergenceConfig,
    k: usize,
    epsilon_hat: f64,
    ep: usize,
) -> Result<ProbabilityRecord> {
    let seed = episode_seed(cfg.seed, ep);
    let stats = cfg.mean_snr_db.episode(k, cfg.fading, 1.0, 1.0, 0, seed)?.analytic_stats();
    let mcfg = MvwoConfig {
        epsilon_hat,
        max_iterations: Some(cfg.iteration_cap),
        record_trace: false,
        formulation: cfg.formulation,
    };
    let (_, tr) = solve_weights(&stats, 1.0, 1.0, &mcfg)?;
    Ok(ProbabilityRecord {
        num_users: k,
        epsilon_hat,
        episode: ep,
        seed,
        iterations: tr.iteration_count,
        converged: tr.converged,
        final_gap: tr.final_gap,
    })
}

pub fn run(cfg: &ConvergenceConfig, runner: &Runner) -> Result<CommandOutput> {
    let mut artifacts = Vec::new();
    let mut traces = Vec::new();
    let traced = runner.map(&cfg.trace_users, |&k| trace(k, cfg))?;
    for (k, tr) in cfg.trace_users.iter().zip(&traced) {
        artifacts.push(Artifact::new(format!("trace_k{k}.csv"), tr.to_csv().into_bytes()));
        traces.push(json!({
            "num_users": k,
            "iterations": tr.iteration_count,
            "converged": tr.converged,
            "final_gap": tr.final_gap,
            "iteration_budget": tr.iteration_budget,
        }));
    }

    let mut jobs = Vec::new();
    for &k in &cfg.probability_users {
        for &e in &cfg.probability_epsilon_hats {
            jobs.extend((0..cfg.episodes).map(|ep| (k, e, ep)));
        }
    }
    let records = runner.map(&jobs, |&(k, e, ep)| probability_episode(cfg, k, e, ep))?;
    let summaries: Vec<ProbabilitySummary> = records
        .chunks(cfg.episodes.max(1))
        .filter(|c| !c.is_empty())
        .map(|c| ProbabilitySummary {
            num_users: c[0].num_users,
            epsilon_hat: c[0].epsilon_hat,
            episodes: c.len(),
            converged_fraction: c.iter().filter(|r| r.converged).count() as f64 / c.len() as f64,
            mean_iterations: super::mean(c.iter().map(|r| r.iterations as f64)),
        })
        .collect();
    if !records.is_empty() {
        artifacts.push(Artifact::csv("convergence_probability.csv", &records)?);
        artifacts.push(Artifact::csv("convergence_summary.csv", &summaries)?);
    }
    Ok(CommandOutput {
        command: "convergence",
        config: serde_json::to_value(cfg)?,
        artifacts,
        summary: json!({ "traces": traces, "probability": summaries }),
    })
}
