//! Post-solve residuals of the nine constraint families.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::RegionSolution;
use crate::error::{Error, Result};
use crate::stats::SnrStats;

const BASE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintFamily {
    RatesNonnegative,
    JensenBound,
    ProbabilityBox,
    OneUserPerSlot,
    CrossCovariance,
    SnrCovariance,
    IndicatorVariance,
    AggregateVariance,
    JointCovariancePsd,
}

impl ConstraintFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RatesNonnegative => "rates nonnegative",
            Self::JensenBound => "jensen bound",
            Self::ProbabilityBox => "probability box",
            Self::OneUserPerSlot => "one user per slot",
            Self::CrossCovariance => "cross covariance",
            Self::SnrCovariance => "snr covariance",
            Self::IndicatorVariance => "indicator variance",
            Self::AggregateVariance => "aggregate variance",
            Self::JointCovariancePsd => "joint covariance psd",
        }
    }
}

/// `1e-6·(1 + ‖(m, v)‖∞)`.
pub fn residual_tolerance(stats: &SnrStats) -> f64 {
    let data = stats
        .means()
        .iter()
        .chain(stats.variances())
        .fold(0.0f64, |a, x| a.max(x.abs()));
    BASE_TOLERANCE * (1.0 + data)
}

/// Worst violation per family for a solution in units where `Δ₀·B = scale`.
/// Positive values are violations; zero or negative means satisfied.
pub fn constraint_residuals(
    stats: &SnrStats,
    sol: &RegionSolution,
    scale: f64,
) -> Vec<(ConstraintFamily, f64)> {
    use ConstraintFamily::*;
    let k = stats.num_users();
    let m = stats.means();
    let v = stats.variances();
    let r: Vec<f64> = sol.rates.as_slice().iter().map(|x| x / scale).collect();
    let p = &sol.p;
    let y = &sol.y;
    let h = DMatrix::from_fn(2 * k, 2 * k, |i, j| sol.h[i][j]);
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);

    let nonneg = max(&mut r.iter().map(|x| -x));
    let jensen = max(&mut (0..k).map(|u| {
        if p[u] <= 0.0 {
            r[u]
        } else if p[u] + y[u] <= 0.0 {
            f64::INFINITY
        } else {
            r[u] - p[u] * (1.0 + y[u] / p[u]).log2()
        }
    }));
    let pbox = max(&mut p.iter().map(|x| (-x).max(x - 1.0)));
    let s: f64 = p.iter().sum();
    let one_user = s - 1.0;
    let cross = max(&mut (0..k).map(|u| (h[(u, k + u)] - (y[u] - p[u] * m[u])).abs()));
    let snr_cov = max(&mut (0..k).flat_map(|i| {
        let h = &h;
        (0..k).map(move |j| {
            let target = if i == j { v[i] } else { 0.0 };
            (h[(k + i, k + j)] - target).abs()
        })
    }));
    let ind_var = max(&mut (0..k).map(|u| h[(u, u)] - (p[u] - p[u] * p[u])));
    let hxx_sum: f64 = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| h[(i, j)]).sum();
    let agg_var = hxx_sum - (s - s * s);
    let sym = (&h + h.transpose()) * 0.5;
    let lmin = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let psd = -lmin;
    vec![
        (RatesNonnegative, nonneg),
        (JensenBound, jensen),
        (ProbabilityBox, pbox),
        (OneUserPerSlot, one_user),
        (CrossCovariance, cross),
        (SnrCovariance, snr_cov),
        (IndicatorVariance, ind_var),
        (AggregateVariance, agg_var),
        (JointCovariancePsd, psd),
    ]
}

pub(super) fn verify(stats: &SnrStats, sol: &RegionSolution, scale: f64) -> Result<()> {
    let tol = residual_tolerance(stats);
    for (family, violation) in constraint_residuals(stats, sol, scale) {
        if !(violation <= tol) {
            return Err(Error::ConstraintViolation {
                family: family.name(),
                violation,
                tolerance: tol,
            });
        }
    }
    Ok(())
}
