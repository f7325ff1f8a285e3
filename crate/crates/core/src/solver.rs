//! Iterative weight design: drive the weighted-sum optimum over `G` towards
//! the utility optimum `r*`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mws::{dot, l2_norm, RateVector, Weights};
use crate::region::{Formulation, RegionProblem};
use crate::stats::SnrStats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvwoConfig {
    /// Convergence error in units of weighted rate at `Δ₀·B = 1`; scaled by `Δ₀·B`.
    pub epsilon_hat: f64,
    /// `None` selects `max(200, ceil(iteration budget))`.
    pub max_iterations: Option<usize>,
    pub record_trace: bool,
    pub formulation: Formulation,
}

impl Default for MvwoConfig {
    fn default() -> Self {
        Self {
            epsilon_hat: 1e-4,
            max_iterations: None,
            record_trace: true,
            formulation: Formulation::default(),
        }
    }
}

impl MvwoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_hat > 0.0 && self.epsilon_hat.is_finite()) {
            return Err(invalid(format!("epsilon_hat must be positive, got {}", self.epsilon_hat)));
        }
        if self.max_iterations == Some(0) {
            return Err(invalid("max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Scalars of one weight update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateTerms {
    pub a: f64,
    pub b: f64,
    pub u_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub weights: Weights,
    pub rates: RateVector,
    /// `⟨w, r − r*⟩`, negative solver residue clamped to zero.
    pub gap: f64,
    /// Absent on the terminating iteration.
    pub update: Option<UpdateTerms>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub iterations: Vec<IterationRecord>,
    pub r_star: RateVector,
    /// `R̂` including the `Δ₀·B` scale.
    pub diameter_bound: f64,
    /// Scaled convergence error.
    pub epsilon: f64,
    /// `2 R̂² ln K / ε² + 1`.
    pub iteration_budget: f64,
    pub max_iterations: usize,
    pub iteration_count: usize,
    pub converged: bool,
    pub final_gap: f64,
}

impl SolverTrace {
    /// `⟨w⁽ⁱ⁾, w⁽ᴵ⁾⟩` against the final iterate.
    pub fn alignment(&self) -> Vec<f64> {
        let Some(last) = self.iterations.last() else {
            return Vec::new();
        };
        self.iterations
            .iter()
            .map(|it| it.weights.dot(last.weights.as_slice()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let k = self.r_star.len();
        let mut out = String::from("iteration,gap,a,b,u_norm,alignment");
        for u in 0..k {
            let _ = write!(out, ",w_{u}");
        }
        for u in 0..k {
            let _ = write!(out, ",r_{u}");
        }
        out.push('\n');
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        for (it, al) in self.iterations.iter().zip(self.alignment()) {
            let _ = write!(
                out,
                "{},{:e},{},{},{},{:e}",
                it.iteration,
                it.gap,
                opt(it.update.map(|u| u.a)),
                opt(it.update.map(|u| u.b)),
                opt(it.update.map(|u| u.u_norm)),
                al
            );
            for w in it.weights.as_slice() {
                let _ = write!(out, ",{w:e}");
            }
            for r in it.rates.as_slice() {
                let _ = write!(out, ",{r:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// `(1/√K, …, 1/√K)`.
pub fn initial_weights(k: usize) -> Result<Weights> {
    if k == 0 {
        return Err(invalid("need at least one user"));
    }
    Ok(Weights::uniform(k))
}

/// `2 R̂² ln K / ε² + 1`.
pub fn iteration_budget(diameter: f64, k: usize, epsilon: f64) -> f64 {
    2.0 * diameter * diameter * (k as f64).ln() / (epsilon * epsilon) + 1.0
}

/// One weight update from the weighted-sum optimum `r` at `w` towards `r_star`.
///
/// Refused unless `⟨w, r − r_star⟩ > epsilon`; the caller terminates instead.
pub fn weight_update(
    w: &Weights,
    r: &RateVector,
    r_star: &RateVector,
    epsilon: f64,
) -> Result<(Weights, UpdateTerms)> {
    let k = w.len();
    if r.len() != k || r_star.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: if r.len() != k { r.len() } else { r_star.len() },
        });
    }
    let d: Vec<f64> = r_star
        .as_slice()
        .iter()
        .zip(r.as_slice())
        .map(|(s, x)| s - x)
        .collect();
    let gap = -w.dot(&d);
    if !(gap > epsilon) {
        return Err(Error::UpdateForbidden { gap, epsilon });
    }
    let a = dot(&d, &d) / gap;
    let b = -d
        .iter()
        .zip(w.as_slice())
        .map(|(di, wi)| di / wi)
        .fold(f64::INFINITY, f64::min);
    let u: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(&d)
        .map(|(wi, di)| (a + b) * wi + di)
        .collect();
    let u_norm = l2_norm(&u);
    let next = Weights::normalized(u)?;
    Ok((next, UpdateTerms { a, b, u_norm }))
}

/// Designs weights from SNR statistics.
pub fn solve_weights(
    stats: &SnrStats,
    delta0: f64,
    bandwidth: f64,
    cfg: &MvwoConfig,
) -> Result<(Weights, SolverTrace)> {
    let problem = RegionProblem::new(stats, delta0, bandwidth, cfg.formulation)?;
    solve_weights_on(&problem, cfg)
}

/// As [`solve_weights`] on an already compiled region.
pub fn solve_weights_on(problem: &RegionProblem, cfg: &MvwoConfig) -> Result<(Weights, SolverTrace)> {
    cfg.validate()?;
    let k = problem.num_users();
    let r_star = problem.optimal_rates()?.rates;
    let epsilon = cfg.epsilon_hat * problem.scale();
    let diameter = problem.diameter_bound();
    let budget = iteration_budget(diameter, k, epsilon);
    let max_iterations = cfg
        .max_iterations
        .unwrap_or_else(|| (budget.ceil().min(usize::MAX as f64) as usize).max(200));

    let mut w = initial_weights(k)?;
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut final_gap = f64::INFINITY;
    let mut count = 0;
    while count < max_iterations {
        count += 1;
        let r = problem.estimate_rates(&w)?.rates;
        let raw: f64 = w
            .as_slice()
            .iter()
            .zip(r.as_slice().iter().zip(r_star.as_slice()))
            .map(|(wi, (ri, si))| wi * (ri - si))
            .sum();
        let gap = raw.max(0.0);
        final_gap = gap;
        if gap < epsilon {
            converged = true;
            if cfg.record_trace {
                iterations.push(IterationRecord {
                    iteration: count,
                    weights: w.clone(),
                    rates: r,
                    gap,
                    update: None,
                });
            }
            break;
        }
        let (next, terms) = weight_update(&w, &r, &r_star, epsilon)?;
        if cfg.record_trace {
            iterations.push(IterationRecord {
                iteration: count,
                weights: w.clone(),
                rates: r,
                gap,
                update: Some(terms),
            });
        }
        w = next;
    }
    Ok((
        w,
        SolverTrace {
            iterations,
            r_star,
            diameter_bound: diameter,
            epsilon,
            iteration_budget: budget,
            max_iterations,
            iteration_count: count,
            converged,
            final_gap,
        },
    ))
}
