//! Closed-loop operation: the scheduler keeps windowed SNR statistics, the
//! weight designer refreshes the MWS weights from them at fixed boundaries.
//!
//! The loop is single threaded and deterministic. Channel realizations depend
//! only on `(scenario, seed)`, so runs of different policies with the same seed
//! see identical SNR sequences.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{mobility_snr_mean, user_stream, ChannelState, Fading, MobilityScenario};
use crate::error::{invalid, Error, Result};
use crate::mws::{geometric_mean, mws_select, utility, RateVector, SuwoState, Utility, Weights};
use crate::region::Formulation;
use crate::solver::{solve_weights, MvwoConfig};
use crate::stats::SnrWindow;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Moving-average window in slots.
    pub beta: usize,
    pub epsilon_hat: f64,
    /// Slots between weight refreshes.
    pub recompute_period: usize,
    /// Slots per boxcar rate report.
    pub report_period: usize,
    /// Iteration cap handed to the weight solver at each refresh.
    pub max_solver_iterations: usize,
    pub formulation: Formulation,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            beta: 20,
            epsilon_hat: 1e-4,
            recompute_period: 100,
            report_period: 100,
            max_solver_iterations: 200,
            formulation: Formulation::default(),
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 2 {
            return Err(invalid(format!("beta must be >= 2, got {}", self.beta)));
        }
        if self.recompute_period == 0 || self.report_period == 0 {
            return Err(invalid("recompute_period and report_period must be >= 1"));
        }
        if self.max_solver_iterations == 0 {
            return Err(invalid("max_solver_iterations must be >= 1"));
        }
        self.solver_config().validate()
    }

    fn solver_config(&self) -> MvwoConfig {
        MvwoConfig {
            epsilon_hat: self.epsilon_hat,
            max_iterations: Some(self.max_solver_iterations),
            record_trace: false,
            formulation: self.formulation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    /// Weights designed from the windowed mean and variance.
    Mvwo,
    /// Per-slot proportional-fair recursion with window `gamma`.
    Suwo { gamma: f64 },
    /// Inverse windowed spectral efficiency.
    Hfs,
    /// Weights held constant; joiners get the minimum weight.
    Fixed { weights: Vec<f64> },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Mvwo => "mvwo",
            Policy::Suwo { .. } => "suwo",
            Policy::Hfs => "hfs",
            Policy::Fixed { .. } => "fixed",
        }
    }
}

/// Mean SNR of a user from a given slot onwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStep {
    pub from_slot: usize,
    pub mean_snr: f64,
}

/// A user with a piecewise-constant mean SNR and an optional lifetime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedUser {
    pub user_id: usize,
    pub fading: Fading,
    pub mean_schedule: Vec<MeanStep>,
    #[serde(default)]
    pub join_slot: usize,
    #[serde(default)]
    pub leave_slot: Option<usize>,
}

impl ScriptedUser {
    pub fn constant(user_id: usize, mean_snr: f64, fading: Fading) -> Self {
        Self {
            user_id,
            fading,
            mean_schedule: vec![MeanStep {
                from_slot: 0,
                mean_snr,
            }],
            join_slot: 0,
            leave_slot: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mean_schedule.is_empty() {
            return Err(invalid(format!("user {} has an empty mean schedule", self.user_id)));
        }
        if self
            .mean_schedule
            .windows(2)
            .any(|s| s[1].from_slot <= s[0].from_slot)
        {
            return Err(invalid(format!("user {}: mean steps must be in increasing slot order", self.user_id)));
        }
        if let Some(s) = self.mean_schedule.iter().find(|s| !(s.mean_snr > 0.0 && s.mean_snr.is_finite())) {
            return Err(invalid(format!("user {}: mean SNR must be positive, got {}", self.user_id, s.mean_snr)));
        }
        if matches!(self.leave_slot, Some(l) if l <= self.join_slot) {
            return Err(invalid(format!("user {} leaves before it joins", self.user_id)));
        }
        crate::channel::UserChannelSpec::new(self.user_id, 1.0, self.fading).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedScenario {
    pub users: Vec<ScriptedUser>,
    pub delta0: f64,
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OnlineScenario {
    Mobility {
        mobility: MobilityScenario,
        bandwidth: f64,
    },
    Scripted(ScriptedScenario),
}

impl OnlineScenario {
    pub fn delta0(&self) -> f64 {
        match self {
            OnlineScenario::Mobility { mobility, .. } => mobility.delta0,
            OnlineScenario::Scripted(s) => s.delta0,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        match self {
            OnlineScenario::Mobility { bandwidth, .. } => *bandwidth,
            OnlineScenario::Scripted(s) => s.bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, b) = (self.delta0(), self.bandwidth());
        if !(d > 0.0 && b > 0.0 && (d * b).is_finite()) {
            return Err(invalid("delta0 and bandwidth must be positive"));
        }
        match self {
            OnlineScenario::Mobility { mobility, .. } => {
                mobility.validate()?;
                if mobility.num_users() == 0 {
                    return Err(invalid("mobility scenario has no users"));
                }
                Ok(())
            }
            OnlineScenario::Scripted(s) => {
                let mut ids: Vec<usize> = s.users.iter().map(|u| u.user_id).collect();
                ids.sort_unstable();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return Err(invalid("duplicate user ids in scenario"));
                }
                s.users.iter().try_for_each(ScriptedUser::validate)?;
                // at least one user must be present in every slot
                let mut changes: BTreeMap<usize, i64> = BTreeMap::new();
                for u in &s.users {
                    *changes.entry(u.join_slot).or_default() += 1;
                    if let Some(l) = u.leave_slot {
                        *changes.entry(l).or_default() -= 1;
                    }
                }
                if !changes.contains_key(&0) {
                    return Err(invalid("no user is present at slot 0"));
                }
                let mut active = 0;
                for (slot, delta) in changes {
                    active += delta;
                    if active <= 0 {
                        return Err(invalid(format!("no user is present from slot {slot}")));
                    }
                }
                Ok(())
            }
        }
    }

    fn initial_users(&self) -> Vec<ActiveUser> {
        match self {
            OnlineScenario::Mobility { mobility, .. } => (0..mobility.num_users())
                .map(|i| ActiveUser {
                    id: i,
                    fading: mobility.fading,
                    mean: MeanSource::Mobility(i),
                })
                .collect(),
            OnlineScenario::Scripted(s) => s
                .users
                .iter()
                .filter(|u| u.join_slot == 0)
                .map(ActiveUser::scripted)
                .collect(),
        }
    }

    fn events_at(&self, t: usize) -> Vec<MembershipEvent> {
        let OnlineScenario::Scripted(s) = self else {
            return Vec::new();
        };
        // joins first so a same-slot swap never empties the cell
        let joins = s
            .users
            .iter()
            .filter(|u| t > 0 && u.join_slot == t)
            .map(|u| MembershipEvent::Join(u.clone()));
        let leaves = s
            .users
            .iter()
            .filter(|u| u.leave_slot == Some(t))
            .map(|u| MembershipEvent::Leave { user_id: u.user_id });
        joins.chain(leaves).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MembershipEvent {
    Join(ScriptedUser),
    Leave { user_id: usize },
}

#[derive(Clone, Debug)]
enum MeanSource {
    Mobility(usize),
    Schedule(Vec<MeanStep>),
}

#[derive(Clone, Debug)]
struct ActiveUser {
    id: usize,
    fading: Fading,
    mean: MeanSource,
}

impl ActiveUser {
    fn scripted(u: &ScriptedUser) -> Self {
        Self {
            id: u.user_id,
            fading: u.fading,
            mean: MeanSource::Schedule(u.mean_schedule.clone()),
        }
    }
}

/// Logged loop events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Join { user_id: usize },
    Leave { user_id: usize },
    /// Weights refreshed from the statistics of `users`.
    Recompute {
        users: Vec<usize>,
        iterations: usize,
        converged: bool,
    },
    /// Refresh failed; the previous weights stay active.
    SolverFailure { users: Vec<usize>, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineEvent {
    pub slot: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub slot: usize,
    pub users: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Boxcar-averaged rates of the users present at the end of a report period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Slots elapsed at the end of the period.
    pub slot: usize,
    pub time: f64,
    pub users: Vec<usize>,
    pub rates: Vec<f64>,
    pub utility: Utility,
    pub geometric_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub policy: Policy,
    pub seed: u64,
    pub slots: usize,
    pub config: OnlineConfig,
    pub rows: Vec<ReportRow>,
    pub weight_history: Vec<WeightRecord>,
    pub events: Vec<OnlineEvent>,
}

impl OnlineReport {
    /// All user ids that appear in any report row, ascending.
    pub fn user_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.rows.iter().flat_map(|r| r.users.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// One row per report period: `slot,time,f,gm,r_<id>...`; absent users are blank
    /// and `f` is `-inf` when a present user was never served.
    pub fn to_csv(&self) -> String {
        let ids = self.user_ids();
        let mut out = String::from("slot,time,f,gm");
        for id in &ids {
            let _ = write!(out, ",r_{id}");
        }
        out.push('\n');
        for row in &self.rows {
            let f = match row.utility {
                Utility::Finite { value } => format!("{value}"),
                Utility::Starved { .. } => "-inf".to_string(),
            };
            let _ = write!(out, "{},{},{},{}", row.slot, row.time, f, row.geometric_mean);
            for id in &ids {
                match row.users.iter().position(|u| u == id) {
                    Some(i) => {
                        let _ = write!(out, ",{}", row.rates[i]);
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

enum PolicyState {
    Designed {
        weights: Vec<f64>,
        solved: bool,
    },
    Suwo(SuwoState),
}

/// The scheduler/weight-designer loop, advanced one slot at a time.
pub struct OnlineLoop {
    scenario: OnlineScenario,
    cfg: OnlineConfig,
    policy: Policy,
    seed: u64,
    t: usize,
    users: Vec<ActiveUser>,
    rngs: BTreeMap<usize, ChaCha8Rng>,
    window: SnrWindow,
    state: PolicyState,
    served: BTreeMap<usize, f64>,
    report: OnlineReport,
}

impl OnlineLoop {
    pub fn new(scenario: OnlineScenario, cfg: OnlineConfig, policy: Policy, seed: u64) -> Result<Self> {
        scenario.validate()?;
        cfg.validate()?;
        let users = scenario.initial_users();
        let k = users.len();
        let state = match &policy {
            Policy::Suwo { gamma } => PolicyState::Suwo(SuwoState::new(k, *gamma)?),
            Policy::Fixed { weights } => {
                if weights.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: weights.len(),
                    });
                }
                PolicyState::Designed {
                    weights: Weights::normalized(weights.clone())?.as_slice().to_vec(),
                    solved: true,
                }
            }
            Policy::Mvwo | Policy::Hfs => PolicyState::Designed {
                weights: Weights::uniform(k).as_slice().to_vec(),
                solved: false,
            },
        };
        let rngs = users.iter().map(|u| (u.id, user_stream(seed, u.id))).collect();
        let mut lp = Self {
            window: SnrWindow::new(k, cfg.beta)?,
            report: OnlineReport {
                policy: policy.clone(),
                seed,
                slots: 0,
                config: cfg,
                rows: Vec::new(),
                weight_history: Vec::new(),
                events: Vec::new(),
            },
            scenario,
            cfg,
            policy,
            seed,
            t: 0,
            users,
            rngs,
            state,
            served: BTreeMap::new(),
        };
        lp.record_weights();
        Ok(lp)
    }

    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn user_ids(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.id).collect()
    }

    /// Weights the scheduler applies in the next slot, in [`Self::user_ids`] order.
    pub fn active_weights(&self) -> Weights {
        match &self.state {
            PolicyState::Designed { weights, .. } => {
                Weights::new(weights.clone()).expect("designed weights are kept normalized")
            }
            PolicyState::Suwo(s) => s.weights(),
        }
    }

    pub fn report(&self) -> &OnlineReport {
        &self.report
    }

    pub fn into_report(self) -> OnlineReport {
        self.report
    }

    /// Adds or removes a user. A joiner is scheduled with the current minimum
    /// weight until its window holds `beta` observations; a leaver's weight is
    /// dropped and the rest renormalized immediately.
    pub fn apply_membership_event(&mut self, event: MembershipEvent) -> Result<()> {
        match event {
            MembershipEvent::Join(u) => {
                u.validate()?;
                if self.users.iter().any(|a| a.id == u.user_id) {
                    return Err(invalid(format!("user {} is already present", u.user_id)));
                }
                self.rngs
                    .entry(u.user_id)
                    .or_insert_with(|| user_stream(self.seed, u.user_id));
                self.users.push(ActiveUser::scripted(&u));
                self.window.add_user();
                match &mut self.state {
                    PolicyState::Designed { weights, .. } => {
                        let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
                        let min = if min.is_finite() { min } else { 1.0 };
                        weights.push(min);
                        *weights = Weights::normalized(std::mem::take(weights))?.as_slice().to_vec();
                    }
                    PolicyState::Suwo(s) => s.add_user(),
                }
                self.log(EventKind::Join { user_id: u.user_id });
            }
            MembershipEvent::Leave { user_id } => {
                let idx = self
                    .users
                    .iter()
                    .position(|a| a.id == user_id)
                    .ok_or(Error::UnknownUser(user_id))?;
                if self.users.len() == 1 {
                    return Err(invalid("the last user cannot leave"));
                }
                self.users.remove(idx);
                self.window.remove_user(idx)?;
                self.served.remove(&user_id);
                match &mut self.state {
                    PolicyState::Designed { weights, .. } => {
                        weights.remove(idx);
                        *weights = Weights::normalized(std::mem::take(weights))?.as_slice().to_vec();
                    }
                    PolicyState::Suwo(s) => s.remove_user(idx)?,
                }
                self.log(EventKind::Leave { user_id });
            }
        }
        self.record_weights();
        Ok(())
    }

    fn log(&mut self, kind: EventKind) {
        self.report.events.push(OnlineEvent { slot: self.t, kind });
    }

    fn record_weights(&mut self) {
        let w = self.active_weights();
        self.report.weight_history.push(WeightRecord {
            slot: self.t,
            users: self.user_ids(),
            weights: w.as_slice().to_vec(),
        });
    }

    fn sample(&mut self) -> Result<ChannelState> {
        let snrs = self
            .users
            .iter()
            .map(|u| {
                let mean = match &u.mean {
                    MeanSource::Mobility(i) => match &self.scenario {
                        OnlineScenario::Mobility { mobility, .. } => mobility_snr_mean(mobility, *i, self.t),
                        OnlineScenario::Scripted(_) => unreachable!("mobility users come from mobility scenarios"),
                    },
                    MeanSource::Schedule(steps) => steps
                        .iter()
                        .rev()
                        .find(|s| s.from_slot <= self.t)
                        .unwrap_or(&steps[0])
                        .mean_snr,
                };
                let rng = self.rngs.get_mut(&u.id).expect("stream created on join");
                mean * u.fading.sample_gain(rng)
            })
            .collect();
        ChannelState::new(snrs)
    }

    /// Advances one slot: scripted events, channel draw, scheduling, window
    /// update, then any refresh or report due at the end of the slot.
    pub fn step(&mut self) -> Result<()> {
        for ev in self.scenario.events_at(self.t) {
            self.apply_membership_event(ev)?;
        }
        let state = self.sample()?;
        let action = match &mut self.state {
            PolicyState::Designed { weights, .. } => {
                mws_select(&Weights::new(weights.clone())?, &state)
            }
            PolicyState::Suwo(s) => s.schedule(&state),
        };
        if let Some(k) = action.selected {
            *self.served.entry(self.users[k].id).or_insert(0.0) += state.snrs()[k].ln_1p() / std::f64::consts::LN_2;
        }
        self.window.push_observation(&state)?;
        self.t += 1;

        let bootstrap = matches!(self.state, PolicyState::Designed { solved: false, .. })
            && self.window.sample_count() >= self.cfg.beta;
        if bootstrap || self.t.is_multiple_of(self.cfg.recompute_period) {
            self.refresh();
        }
        if self.t.is_multiple_of(self.cfg.report_period) {
            self.snapshot()?;
        }
        self.report.slots = self.t;
        Ok(())
    }

    fn refresh(&mut self) {
        if !matches!(self.policy, Policy::Mvwo | Policy::Hfs) {
            return;
        }
        let ready: Vec<usize> = (0..self.users.len())
            .filter(|&i| self.window.user_count(i) >= self.cfg.beta)
            .collect();
        if ready.is_empty() {
            return;
        }
        let ids: Vec<usize> = ready.iter().map(|&i| self.users[i].id).collect();
        let designed = match self.policy {
            Policy::Mvwo => self.window.estimate_users(&ready).and_then(|stats| {
                let (w, trace) = solve_weights(
                    &stats,
                    self.scenario.delta0(),
                    self.scenario.bandwidth(),
                    &self.cfg.solver_config(),
                )?;
                Ok((w, trace.iteration_count, trace.converged))
            }),
            _ => ready
                .iter()
                .map(|&i| self.window.mean_efficiency(i))
                .collect::<Result<Vec<f64>>>()
                .and_then(|e| crate::mws::hfs_weights(&e))
                .map(|w| (w, 0, true)),
        };
        match designed {
            Ok((w, iterations, converged)) => {
                let min = w.min();
                let mut full = vec![min; self.users.len()];
                for (&i, &wi) in ready.iter().zip(w.as_slice()) {
                    full[i] = wi;
                }
                let full = Weights::normalized(full).expect("positive weights").as_slice().to_vec();
                self.state = PolicyState::Designed {
                    weights: full,
                    solved: true,
                };
                self.log(EventKind::Recompute {
                    users: ids,
                    iterations,
                    converged,
                });
                self.record_weights();
            }
            Err(e) => self.log(EventKind::SolverFailure {
                users: ids,
                message: e.to_string(),
            }),
        }
    }

    fn snapshot(&mut self) -> Result<()> {
        let scale = self.scenario.delta0() * self.scenario.bandwidth() / self.cfg.report_period as f64;
        let users = self.user_ids();
        let rates: Vec<f64> = users
            .iter()
            .map(|id| self.served.get(id).copied().unwrap_or(0.0) * scale)
            .collect();
        let r = RateVector::new(rates.clone())?;
        self.report.rows.push(ReportRow {
            slot: self.t,
            time: self.t as f64 * self.scenario.delta0(),
            users,
            rates,
            utility: utility(&r),
            geometric_mean: geometric_mean(&r),
        });
        self.served.clear();
        Ok(())
    }
}

/// Runs `slots` slots of the closed loop.
pub fn run_online(
    scenario: &OnlineScenario,
    cfg: &OnlineConfig,
    policy: &Policy,
    slots: usize,
    seed: u64,
) -> Result<OnlineReport> {
    if slots < cfg.beta {
        return Err(invalid(format!("horizon {slots} is shorter than the window {}", cfg.beta)));
    }
    let mut lp = OnlineLoop::new(scenario.clone(), *cfg, policy.clone(), seed)?;
    for _ in 0..slots {
        lp.step()?;
    }
    Ok(lp.into_report())
}

/// Paired per-report comparison of two runs over the same channel realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub slot: usize,
    pub time: f64,
    pub num_users: usize,
    pub f_a: f64,
    pub f_b: f64,
    /// `f_a − f_b` from the rates directly.
    pub f_difference: f64,
    pub gm_ratio: f64,
    /// `K·ln(gm_ratio)`.
    pub k_ln_gm_ratio: f64,
}

/// Rows where both runs have every present user served.
pub fn compare_reports(a: &OnlineReport, b: &OnlineReport) -> Result<Vec<ComparisonRow>> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::DimensionMismatch {
            expected: a.rows.len(),
            got: b.rows.len(),
        });
    }
    let mut out = Vec::new();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        if ra.slot != rb.slot || ra.users != rb.users {
            return Err(invalid(format!("reports diverge at slot {}", ra.slot)));
        }
        let (Utility::Finite { value: fa }, Utility::Finite { value: fb }) = (&ra.utility, &rb.utility) else {
            continue;
        };
        let f_difference: f64 = ra.rates.iter().zip(&rb.rates).map(|(x, y)| x.ln() - y.ln()).sum();
        let gm_ratio = ra.geometric_mean / rb.geometric_mean;
        out.push(ComparisonRow {
            slot: ra.slot,
            time: ra.time,
            num_users: ra.users.len(),
            f_a: *fa,
            f_b: *fb,
            f_difference,
            gm_ratio,
            k_ln_gm_ratio: ra.users.len() as f64 * gm_ratio.ln(),
        });
    }
    Ok(out)
}

/// Three users bouncing between 20 m and 35 m at 5 m/s, 10 ms slots, 5 MHz.
pub fn default_mobility_scenario() -> OnlineScenario {
    OnlineScenario::Mobility {
        mobility: MobilityScenario {
            speed: 5.0,
            near_point: 20.0,
            far_point: 35.0,
            initial_positions: vec![20.0, 27.5, 35.0],
            initial_directions: vec![1.0, 1.0, -1.0],
            tx_psd_dbm_hz: 0.0,
            noise_psd_dbm_hz: -90.0,
            delta0: 0.01,
            fading: Fading::Rician { k_factor: 10.0 },
        },
        bandwidth: 5e6,
    }
}
