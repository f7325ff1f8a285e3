//! Per-slot SNR generation for the fading models used in the experiments.
//!
//! All SNR values are linear. Every user draws from its own ChaCha stream,
//! keyed by `(seed, user_id)`, so the realization seen by one user never
//! depends on how many users exist or which scheduler consumes the states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::SnrStats;

/// Stream id reserved for episode-level draws (mean SNRs).
const EPISODE_STREAM: u64 = u64::MAX;
/// Stream id reserved for randomized tie-breaking.
pub const TIE_BREAK_STREAM: u64 = u64::MAX - 1;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Normalized (unit-mean) small-scale fading power gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Fading {
    /// LOS/NLOS power ratio `k_factor` (linear).
    Rician { k_factor: f64 },
    /// `g = exp(sigma * n - sigma^2 / 2)`, `n ~ N(0, 1)`.
    Lognormal { sigma: f64 },
    Deterministic,
}

impl Fading {
    fn validate(&self) -> Result<()> {
        match *self {
            Fading::Rician { k_factor } if !(k_factor >= 0.0 && k_factor.is_finite()) => {
                Err(invalid(format!("rician k_factor must be >= 0, got {k_factor}")))
            }
            Fading::Lognormal { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(invalid(format!("lognormal sigma must be >= 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Variance of the unit-mean power gain.
    pub fn gain_variance(&self) -> f64 {
        match *self {
            Fading::Rician { k_factor } => (1.0 + 2.0 * k_factor) / (1.0 + k_factor).powi(2),
            Fading::Lognormal { sigma } => (sigma * sigma).exp_m1(),
            Fading::Deterministic => 0.0,
        }
    }

    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Fading::Rician { k_factor } => {
                let los = (k_factor / (1.0 + k_factor)).sqrt();
                let scatter = (0.5 / (1.0 + k_factor)).sqrt();
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let a = los + scatter * re;
                let b = scatter * im;
                a * a + b * b
            }
            Fading::Lognormal { sigma } => {
                let n: f64 = StandardNormal.sample(rng);
                (sigma * n - 0.5 * sigma * sigma).exp()
            }
            Fading::Deterministic => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserChannelSpec {
    pub user_id: usize,
    /// Linear mean SNR.
    pub mean_snr: f64,
    pub fading: Fading,
}

impl UserChannelSpec {
    pub fn new(user_id: usize, mean_snr: f64, fading: Fading) -> Result<Self> {
        let spec = Self {
            user_id,
            mean_snr,
            fading,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_snr > 0.0 && self.mean_snr.is_finite()) {
            return Err(invalid(format!(
                "user {}: mean SNR must be positive and finite, got {}",
                self.user_id, self.mean_snr
            )));
        }
        self.fading.validate()
    }
}

/// Draws one linear SNR: `mean_snr * g` with `g` the unit-mean fading gain.
pub fn sample_snr<R: Rng + ?Sized>(spec: &UserChannelSpec, rng: &mut R) -> f64 {
    spec.mean_snr * spec.fading.sample_gain(rng)
}

/// Exact `(mean, variance)` of the linear SNR.
pub fn analytic_moments(spec: &UserChannelSpec) -> (f64, f64) {
    let m = spec.mean_snr;
    (m, m * m * spec.fading.gain_variance())
}

/// Independent per-user stream derived from one seed.
pub fn user_stream(seed: u64, user_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_id as u64);
    rng
}

pub fn tie_break_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TIE_BREAK_STREAM);
    rng
}

/// SNRs of all users in one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    snrs: Vec<f64>,
}

impl ChannelState {
    pub fn new(snrs: Vec<f64>) -> Result<Self> {
        if let Some(bad) = snrs.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(invalid(format!("SNR must be positive and finite, got {bad}")));
        }
        Ok(Self { snrs })
    }

    pub fn snrs(&self) -> &[f64] {
        &self.snrs
    }

    pub fn len(&self) -> usize {
        self.snrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snrs.is_empty()
    }
}

/// Seeded scenario with stationary per-user channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub users: Vec<UserChannelSpec>,
    /// Slot duration in seconds.
    pub delta0: f64,
    /// Bandwidth in Hz.
    pub bandwidth: f64,
    /// Horizon in slots.
    pub slots: usize,
    pub seed: u64,
}

impl Episode {
    pub fn new(
        users: Vec<UserChannelSpec>,
        delta0: f64,
        bandwidth: f64,
        slots: usize,
        seed: u64,
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(invalid("episode needs at least one user"));
        }
        for u in &users {
            u.validate()?;
        }
        if !(delta0 > 0.0 && bandwidth > 0.0) {
            return Err(invalid("delta0 and bandwidth must be positive"));
        }
        Ok(Self {
            users,
            delta0,
            bandwidth,
            slots,
            seed,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Rate scale `delta0 * bandwidth`.
    pub fn scale(&self) -> f64 {
        self.delta0 * self.bandwidth
    }

    /// Fresh channel realization from the episode seed.
    pub fn channel(&self) -> EpisodeChannel {
        EpisodeChannel::new(&self.users, self.seed)
    }

    /// Same users, independent realization.
    pub fn channel_with_seed(&self, seed: u64) -> EpisodeChannel {
        EpisodeChannel::new(&self.users, seed)
    }

    pub fn analytic_stats(&self) -> SnrStats {
        let (means, variances) = self.users.iter().map(analytic_moments).unzip();
        SnrStats::new(means, variances, 0).expect("validated specs have valid moments")
    }
}

/// Stateful per-user samplers for one realization.
#[derive(Clone, Debug)]
pub struct EpisodeChannel {
    users: Vec<(UserChannelSpec, ChaCha8Rng)>,
}

impl EpisodeChannel {
    pub fn new(users: &[UserChannelSpec], seed: u64) -> Self {
        Self {
            users: users
                .iter()
                .map(|u| (*u, user_stream(seed, u.user_id)))
                .collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn next_state(&mut self) -> ChannelState {
        ChannelState {
            snrs: self
                .users
                .iter_mut()
                .map(|(spec, rng)| sample_snr(spec, rng))
                .collect(),
        }
    }
}

/// Episode-level distribution of mean SNRs (in dB).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanSnrDistribution {
    pub mean_db: f64,
    pub std_db: f64,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for MeanSnrDistribution {
    fn default() -> Self {
        Self {
            mean_db: 10.0,
            std_db: 5.0,
            min_db: -10.0,
            max_db: 30.0,
        }
    }
}

impl MeanSnrDistribution {
    /// Draws `k` linear mean SNRs; the dB normal is truncated by rejection.
    pub fn draw(&self, k: usize, seed: u64) -> Result<Vec<f64>> {
        if !(self.std_db >= 0.0 && self.min_db <= self.max_db) {
            return Err(invalid("invalid mean SNR distribution"));
        }
        if self.std_db == 0.0 {
            let db = self.mean_db.clamp(self.min_db, self.max_db);
            return Ok(vec![db_to_linear(db); k]);
        }
        let normal = Normal::new(self.mean_db, self.std_db)
            .map_err(|e| invalid(format!("mean SNR distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EPISODE_STREAM);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let db = normal.sample(&mut rng);
            if (self.min_db..=self.max_db).contains(&db) {
                out.push(db_to_linear(db));
            }
        }
        Ok(out)
    }

    /// Random episode with users `0..k` sharing one fading model.
    pub fn episode(
        &self,
        k: usize,
        fading: Fading,
        delta0: f64,
        bandwidth: f64,
        slots: usize,
        seed: u64,
    ) -> Result<Episode> {
        let users = self
            .draw(k, seed)?
            .into_iter()
            .enumerate()
            .map(|(id, m)| UserChannelSpec::new(id, m, fading))
            .collect::<Result<Vec<_>>>()?;
        Episode::new(users, delta0, bandwidth, slots, seed)
    }
}

/// Users moving back and forth along a ray from the base station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityScenario {
    /// Speed in m/s.
    pub speed: f64,
    pub near_point: f64,
    pub far_point: f64,
    pub initial_positions: Vec<f64>,
    /// +1 moves away from the base station first, -1 towards it.
    pub initial_directions: Vec<f64>,
    pub tx_psd_dbm_hz: f64,
    pub noise_psd_dbm_hz: f64,
    /// Slot duration in seconds.
    pub delta0: f64,
    pub fading: Fading,
}

impl MobilityScenario {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.near_point && self.near_point < self.far_point) {
            return Err(invalid("mobility requires 0 < near_point < far_point"));
        }
        if self.initial_positions.len() != self.initial_directions.len() {
            return Err(invalid("one initial direction per user required"));
        }
        if self
            .initial_positions
            .iter()
            .any(|l| !(self.near_point..=self.far_point).contains(l))
        {
            return Err(invalid("initial positions must lie in [near_point, far_point]"));
        }
        if !(self.speed >= 0.0 && self.delta0 > 0.0) {
            return Err(invalid("speed must be >= 0 and delta0 > 0"));
        }
        self.fading.validate()
    }

    pub fn num_users(&self) -> usize {
        self.initial_positions.len()
    }

    /// Path loss in dB at distance `l` meters.
    pub fn path_loss_db(l: f64) -> f64 {
        45.0 + 30.0 * l.log10()
    }

    /// Distance of `user` from the base station at slot `t`.
    pub fn position(&self, user: usize, t: usize) -> f64 {
        let span = self.far_point - self.near_point;
        let travelled = self.initial_directions[user].signum()
            * self.speed
            * self.delta0
            * t as f64;
        let u = (self.initial_positions[user] - self.near_point + travelled).rem_euclid(2.0 * span);
        if u <= span {
            self.near_point + u
        } else {
            self.near_point + 2.0 * span - u
        }
    }

    pub fn mean_snr_db(&self, user: usize, t: usize) -> f64 {
        self.tx_psd_dbm_hz - self.noise_psd_dbm_hz - Self::path_loss_db(self.position(user, t))
    }
}

/// Linear mean SNR of `user` at slot `t`.
pub fn mobility_snr_mean(scenario: &MobilityScenario, user: usize, t: usize) -> f64 {
    db_to_linear(scenario.mean_snr_db(user, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_moments(spec: &UserChannelSpec, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = user_stream(seed, spec.user_id);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_snr(spec, &mut rng);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        (mean, s2 / n as f64 - mean * mean)
    }

    #[test]
    fn deterministic_is_constant() {
        let spec = UserChannelSpec::new(0, 3.16, Fading::Deterministic).unwrap();
        let mut rng = user_stream(1, 0);
        for _ in 0..100 {
            assert_eq!(sample_snr(&spec, &mut rng), 3.16);
        }
        assert_eq!(analytic_moments(&UserChannelSpec { mean_snr: 5.0, ..spec }), (5.0, 0.0));
    }

    #[test]
    fn rician_k10_variance_is_0_17_m2() {
        let spec = UserChannelSpec::new(0, 10.0, Fading::Rician { k_factor: 10.0 }).unwrap();
        let (mean, var) = analytic_moments(&spec);
        assert_eq!(mean, 10.0);
        assert!((var - 100.0 * 21.0 / 121.0).abs() < 1e-12);
        assert!((var - 17.355).abs() < 1e-3);
        let (m, v) = sample_moments(&spec, 1_000_000, 7);
        assert!((m - 10.0).abs() / 10.0 < 0.01);
        assert!((v - 0.17 * 100.0).abs() / (0.17 * 100.0) < 0.03, "sample variance {v}");
        assert!((v - var).abs() / var < 0.05);
    }

    #[test]
    fn lognormal_variance() {
        let spec = UserChannelSpec::new(3, 1.0, Fading::Lognormal { sigma: 0.5 }).unwrap();
        let (m, v) = sample_moments(&spec, 1_000_000, 11);
        let expect = 0.25f64.exp() - 1.0;
        assert!((m - 1.0).abs() < 0.01);
        assert!((v - expect).abs() / expect < 0.03);
        let quarter = UserChannelSpec::new(0, 1.0, Fading::Lognormal { sigma: 0.25 }).unwrap();
        assert!((analytic_moments(&quarter).1 - (0.0625f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(UserChannelSpec::new(0, 0.0, Fading::Deterministic).is_err());
        assert!(UserChannelSpec::new(0, 1.0, Fading::Rician { k_factor: -1.0 }).is_err());
        assert!(UserChannelSpec::new(0, 1.0, Fading::Lognormal { sigma: f64::NAN }).is_err());
        assert!(ChannelState::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_independent_of_user_count() {
        let a = UserChannelSpec::new(0, 2.0, Fading::Rician { k_factor: 10.0 }).unwrap();
        let b = UserChannelSpec::new(1, 5.0, Fading::Rician { k_factor: 10.0 }).unwrap();
        let mut solo = EpisodeChannel::new(&[a], 42);
        let mut pair = EpisodeChannel::new(&[a, b], 42);
        let mut again = EpisodeChannel::new(&[a, b], 42);
        for _ in 0..1000 {
            let s = solo.next_state();
            let p = pair.next_state();
            let q = again.next_state();
            assert_eq!(s.snrs()[0].to_bits(), p.snrs()[0].to_bits());
            assert_eq!(p, q);
        }
    }

    #[test]
    fn episode_means_are_truncated() {
        let dist = MeanSnrDistribution {
            std_db: 30.0,
            ..Default::default()
        };
        let means = dist.draw(2000, 3).unwrap();
        assert!(means
            .iter()
            .all(|m| (-10.0 - 1e-9..=30.0 + 1e-9).contains(&linear_to_db(*m))));
        assert_eq!(means, dist.draw(2000, 3).unwrap());
    }

    fn scenario() -> MobilityScenario {
        MobilityScenario {
            speed: 5.0,
            near_point: 20.0,
            far_point: 35.0,
            initial_positions: vec![20.0, 27.5, 35.0],
            initial_directions: vec![1.0, 1.0, 1.0],
            tx_psd_dbm_hz: 0.0,
            noise_psd_dbm_hz: -90.0,
            delta0: 0.01,
            fading: Fading::Rician { k_factor: 10.0 },
        }
    }

    #[test]
    fn mobility_mean_at_20m() {
        let s = scenario();
        // 90 - 45 - 30 log10(20) = 5.9691 dB
        assert!((s.mean_snr_db(0, 0) - 5.969_100_130_080_564).abs() < 1e-9);
        assert!((mobility_snr_mean(&s, 0, 0) - db_to_linear(5.969_100_130_080_564)).abs() < 1e-9);
    }

    #[test]
    fn mobility_reflects_and_moves() {
        let s = scenario();
        assert_eq!(s.position(2, 0), 35.0);
        assert!(s.position(2, 1) < 35.0);
        assert!((s.position(1, 1) - s.position(1, 0) - 0.05).abs() < 1e-12);
        for t in 0..5000 {
            for u in 0..3 {
                let l = s.position(u, t);
                assert!((20.0..=35.0).contains(&l));
            }
        }
    }
}
