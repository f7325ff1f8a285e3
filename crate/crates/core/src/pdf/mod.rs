//! MWS average rates from full SNR densities by numerical quadrature.
//!
//! Used as an oracle for the mean/variance estimates and the slot simulator;
//! practical only for a handful of users.

mod quadrature;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::channel::{Fading, UserChannelSpec};
use crate::error::{invalid, Error, Result};
use crate::mws::{RateVector, Weights};

pub use quadrature::{integrate, Quadrature};

/// Upper-tail probability left out of every integral.
pub const TAIL_MASS: f64 = 1e-8;
/// Absolute tolerance of each per-user integral (normalized rate units).
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;
/// Largest user count accepted by [`rate_via_pdf`].
pub const MAX_USERS: usize = 4;

const INITIAL_PANELS: usize = 16;
const MAX_PANELS: usize = 4000;

/// Density of the linear SNR `φ = mean · g` for a unit-mean fading gain `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SnrDensity {
    Rician { k_factor: f64, mean: f64 },
    Lognormal { sigma: f64, mean: f64 },
}

impl SnrDensity {
    pub fn rician(k_factor: f64, mean: f64) -> Result<Self> {
        let d = SnrDensity::Rician { k_factor, mean };
        d.validate()?;
        Ok(d)
    }

    pub fn lognormal(sigma: f64, mean: f64) -> Result<Self> {
        let d = SnrDensity::Lognormal { sigma, mean };
        d.validate()?;
        Ok(d)
    }

    /// Density of a simulated user. Deterministic channels have no density.
    pub fn from_spec(spec: &UserChannelSpec) -> Result<Self> {
        match spec.fading {
            Fading::Rician { k_factor } => Self::rician(k_factor, spec.mean_snr),
            Fading::Lognormal { sigma } => Self::lognormal(sigma, spec.mean_snr),
            Fading::Deterministic => Err(invalid(format!(
                "user {} has a deterministic channel without a density",
                spec.user_id
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mean = self.mean();
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(invalid(format!("density mean must be positive, got {mean}")));
        }
        match *self {
            SnrDensity::Rician { k_factor, .. } if !(0.0..=1e4).contains(&k_factor) => {
                Err(invalid(format!("rician k_factor must be in [0, 1e4], got {k_factor}")))
            }
            SnrDensity::Lognormal { sigma, .. } if !(sigma > 0.0 && sigma <= 10.0) => {
                Err(invalid(format!("lognormal sigma must be in (0, 10], got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SnrDensity::Rician { mean, .. } | SnrDensity::Lognormal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        let gain = match *self {
            SnrDensity::Rician { k_factor, .. } => Fading::Rician { k_factor }.gain_variance(),
            SnrDensity::Lognormal { sigma, .. } => Fading::Lognormal { sigma }.gain_variance(),
        };
        self.mean() * self.mean() * gain
    }

    pub fn pdf(&self, phi: f64) -> f64 {
        if !(phi >= 0.0) {
            return 0.0;
        }
        match *self {
            SnrDensity::Rician { k_factor, mean } => {
                let c = (1.0 + k_factor) / mean;
                c * rician_kernel(k_factor, c * phi)
            }
            SnrDensity::Lognormal { sigma, mean } => {
                if phi == 0.0 {
                    return 0.0;
                }
                let z = lognormal_z(sigma, mean, phi);
                (-0.5 * z * z).exp() / (phi * sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    pub fn cdf(&self, phi: f64) -> f64 {
        if !(phi > 0.0) {
            return 0.0;
        }
        if phi == f64::INFINITY {
            return 1.0;
        }
        match *self {
            SnrDensity::Rician { k_factor, mean } => {
                poisson_mixture(k_factor, |j| gamma_lr(j + 1.0, (1.0 + k_factor) * phi / mean))
            }
            SnrDensity::Lognormal { sigma, mean } => {
                0.5 * erfc(-lognormal_z(sigma, mean, phi) / std::f64::consts::SQRT_2)
            }
        }
    }

    /// `P(Φ > φ)`, accurate in the upper tail.
    pub fn sf(&self, phi: f64) -> f64 {
        if !(phi > 0.0) {
            return 1.0;
        }
        if phi == f64::INFINITY {
            return 0.0;
        }
        match *self {
            SnrDensity::Rician { k_factor, mean } => {
                poisson_mixture(k_factor, |j| gamma_ur(j + 1.0, (1.0 + k_factor) * phi / mean))
            }
            SnrDensity::Lognormal { sigma, mean } => {
                0.5 * erfc(lognormal_z(sigma, mean, phi) / std::f64::consts::SQRT_2)
            }
        }
    }

    /// Smallest `φ` with `sf(φ) <= tail`, to relative precision 1e-12.
    pub fn upper_quantile(&self, tail: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = self.mean();
        while self.sf(hi) > tail {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if self.sf(mid) > tail {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Right end of the integration range.
    pub fn truncation_point(&self) -> f64 {
        self.upper_quantile(TAIL_MASS)
    }
}

fn lognormal_z(sigma: f64, mean: f64, phi: f64) -> f64 {
    (phi.ln() - mean.ln() + 0.5 * sigma * sigma) / sigma
}

fn ln_poisson(k: f64, j: f64) -> f64 {
    if k == 0.0 {
        return if j == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -k + j * k.ln() - ln_gamma(j + 1.0)
}

/// `Σ_j Pois(j; k) · term(j)` for `term` bounded by one.
fn poisson_mixture(k: f64, term: impl Fn(f64) -> f64) -> f64 {
    if k == 0.0 {
        return term(0.0);
    }
    let spread = 12.0 * k.sqrt() + 30.0;
    let lo = (k - spread).max(0.0).floor() as usize;
    let hi = (k + spread).ceil() as usize;
    (lo..=hi)
        .map(|j| {
            let w = ln_poisson(k, j as f64).exp();
            if w == 0.0 {
                0.0
            } else {
                w * term(j as f64)
            }
        })
        .sum()
}

/// Density of `u = (1+k)·g` for the Rician power gain `g`:
/// `Σ_j Pois(j; k) · u^j e^{-u} / j!`.
fn rician_kernel(k: f64, u: f64) -> f64 {
    if u == 0.0 || k == 0.0 {
        return (-k - u).exp();
    }
    let peak = (k * u).sqrt().floor();
    let log_term = |j: f64| ln_poisson(k, j) + ln_poisson(u, j);
    let top = log_term(peak);
    let mut sum = 0.0;
    let mut j = peak;
    loop {
        let l = log_term(j);
        sum += (l - top).exp();
        if l < top - 40.0 || j == 0.0 {
            break;
        }
        j -= 1.0;
    }
    j = peak + 1.0;
    loop {
        let l = log_term(j);
        sum += (l - top).exp();
        if l < top - 40.0 {
            break;
        }
        j += 1.0;
    }
    sum * top.exp()
}

fn check_inputs(densities: &[SnrDensity], w: &Weights) -> Result<()> {
    if densities.is_empty() {
        return Err(invalid("no densities given"));
    }
    if densities.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: densities.len(),
            got: w.len(),
        });
    }
    densities.iter().try_for_each(SnrDensity::validate)
}

fn probability_unchecked(densities: &[SnrDensity], w: &[f64], k: usize, phi: f64) -> f64 {
    let l = phi.ln_1p();
    densities
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(j, d)| d.cdf((w[k] / w[j] * l).exp_m1()))
        .product()
}

/// Probability that user `k` wins the slot when its SNR is `phi`:
/// every other user `j` must have `w_j log(1+φ_j) < w_k log(1+φ)`.
pub fn schedule_probability(densities: &[SnrDensity], w: &Weights, k: usize, phi: f64) -> Result<f64> {
    check_inputs(densities, w)?;
    if k >= densities.len() {
        return Err(Error::UnknownUser(k));
    }
    if !(phi >= 0.0) {
        return Err(invalid(format!("snr must be nonnegative, got {phi}")));
    }
    Ok(probability_unchecked(densities, w.as_slice(), k, phi))
}

/// Per-user integral of `q_k(φ) · P_k(φ) · g(φ)` over the truncated support.
fn user_integral(
    densities: &[SnrDensity],
    w: &[f64],
    k: usize,
    g: impl Fn(f64) -> f64,
) -> Result<Quadrature> {
    let d = densities[k];
    let upper = d.truncation_point();
    integrate(
        |phi| d.pdf(phi) * probability_unchecked(densities, w, k, phi) * g(phi),
        0.0,
        upper,
        QUADRATURE_TOLERANCE,
        INITIAL_PANELS,
        MAX_PANELS,
    )
    .map_err(|q| Error::Quadrature {
        estimate: q.error_estimate,
    })
}

/// Rates with the quadrature error of each coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdfRates {
    pub rates: RateVector,
    /// Quadrature error estimate plus an estimate of the truncated tail,
    /// in the same units as `rates`.
    pub error_bound: Vec<f64>,
    pub evaluations: usize,
}

/// Scheduling probability of each user, `∫ q_k(φ) P_k(φ) dφ`.
pub fn schedule_probabilities(densities: &[SnrDensity], w: &Weights) -> Result<Vec<f64>> {
    check_inputs(densities, w)?;
    (0..densities.len())
        .map(|k| user_integral(densities, w.as_slice(), k, |_| 1.0).map(|q| q.value))
        .collect()
}

/// MWS average rates computed from the densities, with error estimates.
pub fn rate_via_pdf_detailed(
    densities: &[SnrDensity],
    w: &Weights,
    delta0: f64,
    bandwidth: f64,
) -> Result<PdfRates> {
    check_inputs(densities, w)?;
    if densities.len() > MAX_USERS {
        return Err(invalid(format!(
            "density quadrature supports at most {MAX_USERS} users, got {}",
            densities.len()
        )));
    }
    if !(delta0 > 0.0 && bandwidth > 0.0 && (delta0 * bandwidth).is_finite()) {
        return Err(invalid("slot length and bandwidth must be positive"));
    }
    let scale = delta0 * bandwidth;
    let mut rates = Vec::with_capacity(densities.len());
    let mut error_bound = Vec::with_capacity(densities.len());
    let mut evaluations = 0;
    for k in 0..densities.len() {
        let q = user_integral(densities, w.as_slice(), k, |phi| phi.ln_1p() / std::f64::consts::LN_2)?;
        let upper = densities[k].truncation_point();
        // the truncated tail is dominated by TAIL_MASS · log2(1+φ) just past the cut
        let tail = TAIL_MASS * (1.0 + 2.0 * upper).log2();
        rates.push(q.value.max(0.0) * scale);
        error_bound.push((q.error_estimate + tail) * scale);
        evaluations += q.evaluations;
    }
    Ok(PdfRates {
        rates: RateVector::new(rates)?,
        error_bound,
        evaluations,
    })
}

/// MWS average rates computed from the densities.
pub fn rate_via_pdf(densities: &[SnrDensity], w: &Weights, delta0: f64, bandwidth: f64) -> Result<RateVector> {
    rate_via_pdf_detailed(densities, w, delta0, bandwidth).map(|r| r.rates)
}

/// `E[log2(1+φ)]` of a single density.
pub fn mean_efficiency_via_pdf(density: &SnrDensity) -> Result<f64> {
    let w = Weights::uniform(1);
    rate_via_pdf(std::slice::from_ref(density), &w, 1.0, 1.0).map(|r| r.as_slice()[0])
}
