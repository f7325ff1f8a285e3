//! Max-weight scheduling, the SUWO/HFS weight rules, and rate measurement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, Episode, EpisodeChannel};
use crate::error::{invalid, Error, Result};

/// Allowed deviation of `‖w‖₂` from 1.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Initial SUWO rate average.
pub const SUWO_INITIAL_LAMBDA: f64 = 1e-5;
const SUWO_LAMBDA_FLOOR: f64 = 1e-300;

/// Strictly positive, unit-norm scheduler weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    /// Accepts a vector that already satisfies the invariants.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        check_positive(&w)?;
        let norm = l2_norm(&w);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(invalid(format!("weights must have unit norm, got {norm}")));
        }
        Ok(Self(w))
    }

    /// Scales a strictly positive vector to unit norm.
    pub fn normalized(w: Vec<f64>) -> Result<Self> {
        check_positive(&w)?;
        // rescale by the max first so huge entries do not overflow the norm
        let max = w.iter().copied().fold(0.0, f64::max);
        let scaled: Vec<f64> = w.iter().map(|x| x / max).collect();
        let norm = l2_norm(&scaled);
        let out: Vec<f64> = scaled.iter().map(|x| x / norm).collect();
        check_positive(&out)?;
        Ok(Self(out))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform weights need k >= 1");
        Self(vec![1.0 / (k as f64).sqrt(); k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

fn check_positive(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(invalid("weights need at least one entry"));
    }
    if let Some(x) = w.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(invalid(format!("weights must be positive and finite, got {x}")));
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nonnegative per-user average rates in bits per slot-scaled unit (Δ₀·B included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if let Some(x) = r.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(invalid(format!("rates must be nonnegative and finite, got {x}")));
        }
        Ok(Self(r))
    }

    /// Clamps small negative solver residue to zero.
    pub(crate) fn from_solver(r: Vec<f64>) -> Self {
        Self(r.into_iter().map(|x| x.max(0.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| x * c).collect())
    }
}

impl TryFrom<Vec<f64>> for RateVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RateVector> for Vec<f64> {
    fn from(r: RateVector) -> Self {
        r.0
    }
}

/// Outcome of one scheduling decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleAction {
    pub selected: Option<usize>,
}

impl ScheduleAction {
    pub fn one_hot(&self, k: usize) -> Vec<u8> {
        (0..k).map(|i| u8::from(self.selected == Some(i))).collect()
    }

    pub fn is_selected(&self, user: usize) -> bool {
        self.selected == Some(user)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    Random,
}

/// Index maximizing `w_k log2(1+φ_k)`, lowest index on exact ties.
pub fn mws_select(w: &Weights, state: &ChannelState) -> ScheduleAction {
    ScheduleAction {
        selected: argmax_lowest(w.as_slice(), state.snrs()),
    }
}

/// As [`mws_select`] but ties are resolved uniformly at random.
pub fn mws_select_random<R: Rng + ?Sized>(
    w: &Weights,
    state: &ChannelState,
    rng: &mut R,
) -> ScheduleAction {
    ScheduleAction {
        selected: argmax_random(w.as_slice(), state.snrs(), rng),
    }
}

fn argmax_lowest(w: &[f64], snrs: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut best_val = f64::NEG_INFINITY;
    for (k, (wk, s)) in w.iter().zip(snrs).enumerate() {
        let val = wk * s.ln_1p();
        if val > best_val {
            best_val = val;
            best = Some(k);
        }
    }
    best
}

fn argmax_random<R: Rng + ?Sized>(w: &[f64], snrs: &[f64], rng: &mut R) -> Option<usize> {
    let mut best = None;
    let mut best_val = f64::NEG_INFINITY;
    let mut ties = 0u32;
    for (k, (wk, s)) in w.iter().zip(snrs).enumerate() {
        let val = wk * s.ln_1p();
        if val > best_val {
            best_val = val;
            best = Some(k);
            ties = 1;
        } else if val == best_val {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                best = Some(k);
            }
        }
    }
    best
}

/// Slot-by-slot scheduler that accumulates rates.
#[derive(Clone, Debug)]
pub struct RateMeter {
    sums: Vec<f64>,
    slots: usize,
}

impl RateMeter {
    pub fn new(k: usize) -> Self {
        Self {
            sums: vec![0.0; k],
            slots: 0,
        }
    }

    pub fn record(&mut self, action: ScheduleAction, state: &ChannelState) {
        if let Some(k) = action.selected {
            self.sums[k] += (1.0 + state.snrs()[k]).log2();
        }
        self.slots += 1;
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Time-average rates scaled by `scale = Δ₀·B`.
    pub fn rates(&self, scale: f64) -> RateVector {
        let n = self.slots.max(1) as f64;
        RateVector(self.sums.iter().map(|s| scale * s / n).collect())
    }
}

/// Average rates of the MWS with weights `w` over `slots` fresh slots of `episode`.
pub fn measure_rates(w: &Weights, episode: &Episode, slots: usize) -> Result<RateVector> {
    let mut channel = episode.channel();
    measure_rates_on(w, &mut channel, slots, episode.scale(), TieBreak::LowestIndex, None)
}

/// Measures on an existing channel realization, advancing it by `slots`.
pub fn measure_rates_on(
    w: &Weights,
    channel: &mut EpisodeChannel,
    slots: usize,
    scale: f64,
    tie_break: TieBreak,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<RateVector> {
    if slots == 0 {
        return Err(invalid("measurement horizon must be >= 1 slot"));
    }
    if w.len() != channel.num_users() {
        return Err(Error::DimensionMismatch {
            expected: channel.num_users(),
            got: w.len(),
        });
    }
    let mut meter = RateMeter::new(w.len());
    match (tie_break, rng) {
        (TieBreak::Random, Some(rng)) => {
            for _ in 0..slots {
                let s = channel.next_state();
                meter.record(mws_select_random(w, &s, rng), &s);
            }
        }
        (TieBreak::Random, None) => {
            return Err(invalid("random tie-break requires an rng"));
        }
        (TieBreak::LowestIndex, _) => {
            for _ in 0..slots {
                let s = channel.next_state();
                meter.record(mws_select(w, &s), &s);
            }
        }
    }
    Ok(meter.rates(scale))
}

/// Exponentially averaged scheduled rates driving the SUWO weights `1/λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuwoState {
    lambda: Vec<f64>,
    gamma: f64,
}

impl SuwoState {
    pub fn new(k: usize, gamma: f64) -> Result<Self> {
        Self::with_lambda(vec![SUWO_INITIAL_LAMBDA; k], gamma)
    }

    pub fn with_lambda(lambda: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma must be >= 1, got {gamma}")));
        }
        if lambda.is_empty() || lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid("lambda entries must be positive and finite"));
        }
        Ok(Self { lambda, gamma })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Schedules one slot with the raw weights `1/λ` and updates λ.
    pub fn schedule(&mut self, state: &ChannelState) -> ScheduleAction {
        let action = ScheduleAction {
            selected: self.select(state),
        };
        self.update(action, state);
        action
    }

    fn select(&self, state: &ChannelState) -> Option<usize> {
        // argmax of log2(1+φ)/λ
        let mut best = None;
        let mut best_val = f64::NEG_INFINITY;
        for (k, (l, s)) in self.lambda.iter().zip(state.snrs()).enumerate() {
            let val = s.ln_1p() / l;
            if val > best_val {
                best_val = val;
                best = Some(k);
            }
        }
        best
    }

    pub fn update(&mut self, action: ScheduleAction, state: &ChannelState) {
        let a = 1.0 / self.gamma;
        for (k, l) in self.lambda.iter_mut().enumerate() {
            let served = if action.is_selected(k) {
                (1.0 + state.snrs()[k]).log2()
            } else {
                0.0
            };
            *l = ((1.0 - a) * *l + a * served).max(SUWO_LAMBDA_FLOOR);
        }
    }

    /// Exported (normalized) weights.
    pub fn weights(&self) -> Weights {
        Weights::normalized(self.lambda.iter().map(|l| 1.0 / l).collect())
            .expect("lambda stays positive")
    }

    pub fn add_user(&mut self) {
        self.lambda.push(SUWO_INITIAL_LAMBDA);
    }

    pub fn remove_user(&mut self, user: usize) -> Result<()> {
        if user >= self.lambda.len() {
            return Err(Error::UnknownUser(user));
        }
        self.lambda.remove(user);
        Ok(())
    }
}

/// One SUWO recursion step; returns the new state and its normalized weights.
pub fn suwo_step(st: &SuwoState, action: ScheduleAction, state: &ChannelState) -> (SuwoState, Weights) {
    let mut next = st.clone();
    next.update(action, state);
    let w = next.weights();
    (next, w)
}

/// Runs SUWO for `slots` slots on `channel` and returns the tuned state.
pub fn tune_suwo(channel: &mut EpisodeChannel, gamma: f64, slots: usize) -> Result<SuwoState> {
    let mut st = SuwoState::new(channel.num_users(), gamma)?;
    for _ in 0..slots {
        let s = channel.next_state();
        st.schedule(&s);
    }
    Ok(st)
}

/// Weights inversely proportional to the average spectral efficiency.
pub fn hfs_weights(mean_efficiency: &[f64]) -> Result<Weights> {
    if let Some(e) = mean_efficiency.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(invalid(format!("average spectral efficiency must be positive, got {e}")));
    }
    Weights::normalized(mean_efficiency.iter().map(|e| 1.0 / e).collect())
}

/// Sample average of `log2(1+φ_k)` over `slots` slots of `channel`.
pub fn mean_efficiency(channel: &mut EpisodeChannel, slots: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channel.num_users()];
    for _ in 0..slots {
        let s = channel.next_state();
        for (acc, x) in sums.iter_mut().zip(s.snrs()) {
            *acc += (1.0 + x).log2();
        }
    }
    sums.iter().map(|s| s / slots.max(1) as f64).collect()
}

/// Log-utility of a rate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    Finite { value: f64 },
    /// At least one user has zero rate; the sum of logs is `-inf`.
    Starved { users: Vec<usize> },
}

impl Utility {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Utility::Finite { value } => Some(*value),
            Utility::Starved { .. } => None,
        }
    }

    /// Numeric value with `-inf` for starved outcomes.
    pub fn value(&self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn is_starved(&self) -> bool {
        matches!(self, Utility::Starved { .. })
    }
}

/// `Σ ln r_k`, or the starved users if any rate is zero.
pub fn utility(r: &RateVector) -> Utility {
    let starved: Vec<usize> = r
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, x)| **x <= 0.0)
        .map(|(k, _)| k)
        .collect();
    if starved.is_empty() {
        Utility::Finite {
            value: r.as_slice().iter().map(|x| x.ln()).sum(),
        }
    } else {
        Utility::Starved { users: starved }
    }
}

/// `(Π r_k)^(1/K)`, zero when any user is starved.
pub fn geometric_mean(r: &RateVector) -> f64 {
    match utility(r) {
        Utility::Finite { value } => (value / r.len() as f64).exp(),
        Utility::Starved { .. } => 0.0,
    }
}
