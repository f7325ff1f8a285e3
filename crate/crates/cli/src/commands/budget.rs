use mvwo_core::channel::Episode;
use mvwo_core::mws::{geometric_mean, hfs_weights, mean_efficiency, measure_rates_on, tune_suwo, utility, TieBreak, Weights};
use mvwo_core::solver::{solve_weights, MvwoConfig};
use mvwo_core::stats::SnrWindow;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{episode_seed, evaluation_seed, Runner};
use crate::config::BudgetComparisonConfig;
use crate::error::Result;
use crate::output::{Artifact, CommandOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRecord {
    pub episode: usize,
    pub budget: usize,
    pub policy: String,
    /// `Σ ln r_k` over the evaluation horizon; `-inf` if a user was starved.
    pub utility: f64,
    pub geometric_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub budget: usize,
    pub policy: String,
    pub mean_utility: f64,
    pub episodes: usize,
    pub starved: usize,
}

pub fn suwo_name(gamma: f64) -> String {
    format!("suwo_g{gamma}")
}

/// Weights of every policy after `budget` tuning slots of `episode`.
fn tuned_weights(cfg: &BudgetComparisonConfig, episode: &Episode, budget: usize) -> Result<Vec<(String, Weights)>> {
    let k = episode.num_users();
    let mut out = Vec::new();

    let mut channel = episode.channel();
    let mut window = SnrWindow::new(k, budget)?;
    for _ in 0..budget {
        window.push_observation(&channel.next_state())?;
    }
    let mcfg = MvwoConfig {
        epsilon_hat: cfg.epsilon_hat,
        max_iterations: Some(cfg.max_iterations),
        record_trace: false,
        formulation: cfg.formulation,
    };
    let (w, _) = solve_weights(&window.estimate()?, cfg.delta0, cfg.bandwidth, &mcfg)?;
    out.push(("mvwo".to_string(), w));

    for &gamma in &cfg.suwo_gammas {
        let st = tune_suwo(&mut episode.channel(), gamma, budget)?;
        out.push((suwo_name(gamma), st.weights()));
    }
    if cfg.include_hfs {
        let eff = mean_efficiency(&mut episode.channel(), budget);
        out.push(("hfs".to_string(), hfs_weights(&eff)?));
    }
    Ok(out)
}

pub fn episode(cfg: &BudgetComparisonConfig, ep: usize) -> Result<Vec<BudgetRecord>> {
    let seed = episode_seed(cfg.seed, ep);
    let episode = cfg.mean_snr_db.episode(
        cfg.num_users,
        cfg.fading,
        cfg.delta0,
        cfg.bandwidth,
        cfg.evaluation_slots,
        seed,
    )?;
    let mut out = Vec::new();
    for &budget in &cfg.budgets {
        for (policy, w) in tuned_weights(cfg, &episode, budget)? {
            // every policy is scored on the same evaluation realization
            let mut eval = episode.channel_with_seed(evaluation_seed(seed));
            let r = measure_rates_on(&w, &mut eval, cfg.evaluation_slots, episode.scale(), TieBreak::LowestIndex, None)?;
            out.push(BudgetRecord {
                episode: ep,
                budget,
                policy,
                utility: utility(&r).value(),
                geometric_mean: geometric_mean(&r),
            });
        }
    }
    Ok(out)
}

pub fn summarize(records: &[BudgetRecord]) -> Vec<BudgetSummary> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in records {
        let key = (r.budget, r.policy.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(budget, policy)| {
            let sel: Vec<&BudgetRecord> = records.iter().filter(|r| r.budget == budget && r.policy == policy).collect();
            BudgetSummary {
                mean_utility: super::mean(sel.iter().map(|r| r.utility)),
                episodes: sel.len(),
                starved: sel.iter().filter(|r| r.utility == f64::NEG_INFINITY).count(),
                budget,
                policy,
            }
        })
        .collect()
}

pub fn run(cfg: &BudgetComparisonConfig, runner: &Runner) -> Result<CommandOutput> {
    let eps: Vec<usize> = (0..cfg.episodes).collect();
    let records: Vec<BudgetRecord> = runner.map(&eps, |&ep| episode(cfg, ep))?.into_iter().flatten().collect();
    let summaries = summarize(&records);
    Ok(CommandOutput {
        command: "budget-comparison",
        config: serde_json::to_value(cfg)?,
        artifacts: vec![
            Artifact::csv("budget.csv", &records)?,
            Artifact::csv("budget_summary.csv", &summaries)?,
        ],
        summary: json!({ "mean_utility": summaries }),
    })
}
