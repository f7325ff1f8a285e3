use mvwo_core::online::{compare_reports, run_online, EventKind, OnlineEvent, OnlineReport, Policy};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{episode_seed, mean, Runner};
use crate::config::OnlineCommandConfig;
use crate::error::Result;
use crate::output::{Artifact, CommandOutput};

/// MVWO (`a`) against SUWO (`b`) at one report row of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineComparisonRecord {
    pub episode: usize,
    pub seed: u64,
    pub slot: usize,
    pub time: f64,
    pub num_users: usize,
    pub f_mvwo: f64,
    pub f_suwo: f64,
    pub f_difference: f64,
    pub gm_ratio: f64,
    pub k_ln_gm_ratio: f64,
}

pub struct EpisodeRun {
    pub episode: usize,
    pub mvwo: OnlineReport,
    pub suwo: OnlineReport,
    pub comparison: Vec<OnlineComparisonRecord>,
}

pub fn episode(cfg: &OnlineCommandConfig, ep: usize) -> Result<EpisodeRun> {
    let seed = episode_seed(cfg.seed, ep);
    let mvwo = run_online(&cfg.scenario, &cfg.online, &Policy::Mvwo, cfg.slots, seed)?;
    let suwo = run_online(&cfg.scenario, &cfg.online, &Policy::Suwo { gamma: cfg.suwo_gamma }, cfg.slots, seed)?;
    let comparison = compare_reports(&mvwo, &suwo)?
        .into_iter()
        .map(|c| OnlineComparisonRecord {
            episode: ep,
            seed,
            slot: c.slot,
            time: c.time,
            num_users: c.num_users,
            f_mvwo: c.f_a,
            f_suwo: c.f_b,
            f_difference: c.f_difference,
            gm_ratio: c.gm_ratio,
            k_ln_gm_ratio: c.k_ln_gm_ratio,
        })
        .collect();
    Ok(EpisodeRun {
        episode: ep,
        mvwo,
        suwo,
        comparison,
    })
}

/// Membership changes and failed refreshes; routine refreshes are only counted.
fn notable(events: &[OnlineEvent]) -> (Vec<&OnlineEvent>, usize, usize) {
    let mut kept = Vec::new();
    let (mut refreshes, mut unconverged) = (0, 0);
    for e in events {
        match &e.kind {
            EventKind::Recompute { converged, .. } => {
                refreshes += 1;
                unconverged += usize::from(!converged);
            }
            _ => kept.push(e),
        }
    }
    (kept, refreshes, unconverged)
}

pub fn run(cfg: &OnlineCommandConfig, runner: &Runner) -> Result<CommandOutput> {
    let eps: Vec<usize> = (0..cfg.episodes).collect();
    let runs = runner.map(&eps, |&ep| episode(cfg, ep))?;

    let mut artifacts = Vec::new();
    let mut events = Vec::new();
    for run in &runs {
        for report in [&run.mvwo, &run.suwo] {
            let name = report.policy.name();
            artifacts.push(Artifact::new(
                format!("online_ep{}_{name}.csv", run.episode),
                report.to_csv().into_bytes(),
            ));
            let (kept, refreshes, unconverged) = notable(&report.events);
            events.push(json!({
                "episode": run.episode,
                "policy": name,
                "refreshes": refreshes,
                "unconverged_refreshes": unconverged,
                "events": kept,
            }));
        }
    }
    let rows: Vec<OnlineComparisonRecord> = runs.iter().flat_map(|r| r.comparison.iter().cloned()).collect();
    artifacts.insert(0, Artifact::csv("online_comparison.csv", &rows)?);
    artifacts.push(Artifact::json("online_events.json", &events)?);

    let per_episode: Vec<f64> = runs
        .iter()
        .map(|r| mean(r.comparison.iter().map(|c| c.gm_ratio)))
        .collect();
    let identity_error = rows
        .iter()
        .map(|c| (c.f_difference - c.k_ln_gm_ratio).abs())
        .fold(0.0, f64::max);
    let summary = json!({
        "rows": rows.len(),
        "mean_gm_ratio": mean(rows.iter().map(|c| c.gm_ratio)),
        "episode_mean_gm_ratio": per_episode,
        "max_identity_error": identity_error,
    });
    Ok(CommandOutput {
        command: "online",
        config: serde_json::to_value(cfg)?,
        artifacts,
        summary,
    })
}
