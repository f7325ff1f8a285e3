//! One module per subcommand. Each returns its files in memory; nothing here
//! touches the filesystem.

pub mod boundary;
pub mod budget;
pub mod convergence;
pub mod estimation;
pub mod online;
pub mod variance;

use mvwo_core::channel::{Episode, UserChannelSpec};
use mvwo_core::mws::{measure_rates, Weights};
use mvwo_core::region::{Formulation, RegionProblem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

/// Worker pool for episode-level parallelism. Results always come back in
/// input order.
pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    /// `None` or `Some(0)` uses all available cores.
    pub fn new(parallel: Option<usize>) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel.unwrap_or(0))
            .build()
            .map_err(|e| config_error(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn map<T, U, F>(&self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }
}

/// Seed of episode `ep` in a run with base seed `seed`.
pub fn episode_seed(seed: u64, ep: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(ep as u64)
}

/// Separate stream for evaluation slots, so tuning and scoring never share samples.
pub fn evaluation_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_E7A1_0000_0000
}

/// One point of a two-user weight sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub w1: f64,
    pub w2: f64,
    pub est_1: f64,
    pub est_2: f64,
    pub meas_1: f64,
    pub meas_2: f64,
    /// `(est − meas) / meas`.
    pub gap_1: f64,
    pub gap_2: f64,
}

impl SweepRow {
    pub fn gaps(&self) -> [f64; 2] {
        [self.gap_1, self.gap_2]
    }

    /// Estimate at least `(1 − slack)` times the measurement in both coordinates.
    pub fn contained(&self, slack: f64) -> bool {
        self.est_1 >= (1.0 - slack) * self.meas_1 && self.est_2 >= (1.0 - slack) * self.meas_2
    }
}

/// `(sin θ_i, cos θ_i)` for `θ_i = i·π/(2(points+1))`, `i = 1..=points`.
pub fn sweep_weights(points: usize) -> Vec<(usize, Weights)> {
    (1..=points)
        .map(|i| {
            let theta = i as f64 * std::f64::consts::FRAC_PI_2 / (points + 1) as f64;
            let w = Weights::new(vec![theta.sin(), theta.cos()]).expect("point on the unit circle");
            (i, w)
        })
        .collect()
}

/// Estimated and measured boundary of a two-user episode. Every point is
/// measured on the same channel realization.
#[allow(clippy::too_many_arguments)]
pub fn boundary_sweep(
    users: Vec<UserChannelSpec>,
    points: usize,
    slots: usize,
    seed: u64,
    delta0: f64,
    bandwidth: f64,
    formulation: Formulation,
    runner: &Runner,
) -> Result<Vec<SweepRow>> {
    let episode = Episode::new(users, delta0, bandwidth, slots, seed)?;
    let problem = RegionProblem::new(&episode.analytic_stats(), delta0, bandwidth, formulation)?;
    runner.map(&sweep_weights(points), |(i, w)| {
        let est = problem.estimate_rates(w)?.rates;
        let meas = measure_rates(w, &episode, slots)?;
        let (e, m) = (est.as_slice(), meas.as_slice());
        Ok(SweepRow {
            index: *i,
            w1: w.as_slice()[0],
            w2: w.as_slice()[1],
            est_1: e[0],
            est_2: e[1],
            meas_1: m[0],
            meas_2: m[1],
            gap_1: (e[0] - m[0]) / m[0],
            gap_2: (e[1] - m[1]) / m[1],
        })
    })
}

/// Per-coordinate `(Σ est − Σ meas) / Σ meas` over a sweep. Stays finite
/// where the pointwise gap does not, e.g. near an axis where a user is never served.
pub fn pooled_gaps(rows: &[SweepRow]) -> [f64; 2] {
    let sum = |f: fn(&SweepRow) -> f64| rows.iter().map(f).sum::<f64>();
    let (e1, e2) = (sum(|r| r.est_1), sum(|r| r.est_2));
    let (m1, m2) = (sum(|r| r.meas_1), sum(|r| r.meas_2));
    [(e1 - m1) / m1, (e2 - m2) / m2]
}

/// Largest `|est − meas|` per coordinate, relative to that user's largest measured rate.
pub fn max_gap_vs_solo(rows: &[SweepRow]) -> f64 {
    let solo1 = rows.iter().map(|r| r.meas_1).fold(0.0, f64::max);
    let solo2 = rows.iter().map(|r| r.meas_2).fold(0.0, f64::max);
    rows.iter()
        .map(|r| f64::max((r.est_1 - r.meas_1).abs() / solo1, (r.est_2 - r.meas_2).abs() / solo2))
        .fold(0.0, f64::max)
}

/// Summary numbers shared by the sweep commands.
pub fn sweep_summary(rows: &[SweepRow]) -> serde_json::Value {
    let gaps: Vec<f64> = rows.iter().flat_map(|r| r.gaps()).collect();
    let unserved = gaps.iter().filter(|g| !g.is_finite()).count();
    let pooled = pooled_gaps(rows);
    serde_json::json!({
        "points": rows.len(),
        "contained_fraction": rows.iter().filter(|r| r.contained(boundary::CONTAINMENT_SLACK)).count() as f64
            / rows.len() as f64,
        "containment_slack": boundary::CONTAINMENT_SLACK,
        "max_abs_gap": gaps.iter().map(|g| g.abs()).fold(0.0, f64::max),
        "points_within_25pct": rows.iter().filter(|r| r.gaps().iter().all(|g| g.abs() <= 0.25)).count(),
        "unserved_coordinates": unserved,
        "pooled_gap": pooled,
        "mean_pooled_gap": 0.5 * (pooled[0] + pooled[1]),
        "max_gap_vs_solo_rate": max_gap_vs_solo(rows),
    })
}

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (n, s) = xs.into_iter().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    s / n as f64
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
