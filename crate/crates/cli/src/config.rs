//! Per-command configuration. Every field has a default; a config file only
//! needs the fields it changes. Unknown fields are rejected.

use mvwo_core::channel::{db_to_linear, Fading, MeanSnrDistribution, UserChannelSpec};
use mvwo_core::online::{default_mobility_scenario, OnlineConfig, OnlineScenario};
use mvwo_core::region::Formulation;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

/// Command-line values that replace config fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub slots: Option<usize>,
}

pub trait CommandConfig: Serialize + DeserializeOwned + Default {
    /// Applies overrides; flags that have no meaning for the command are errors.
    fn apply(&mut self, o: &Overrides) -> Result<()>;
    fn validate(&self) -> Result<()>;

    fn resolve(json: Option<serde_json::Value>, o: &Overrides) -> Result<Self> {
        let mut cfg: Self = match json {
            Some(v) => serde_json::from_value(v).map_err(|e| config_error(e.to_string()))?,
            None => Self::default(),
        };
        cfg.apply(o)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn rician10() -> Fading {
    Fading::Rician { k_factor: 10.0 }
}

fn no_flag(flag: &str, command: &str) -> crate::error::CliError {
    config_error(format!("--{flag} does not apply to {command}"))
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be positive, got {x}")))
    }
}

fn at_least(name: &str, x: usize, min: usize) -> Result<()> {
    if x >= min {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be >= {min}, got {x}")))
    }
}

/// A user given by its mean SNR in dB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub mean_db: f64,
    #[serde(default = "rician10")]
    pub fading: Fading,
}

impl UserConfig {
    pub fn new(mean_db: f64, fading: Fading) -> Self {
        Self { mean_db, fading }
    }
}

pub fn user_specs(users: &[UserConfig]) -> Result<Vec<UserChannelSpec>> {
    users
        .iter()
        .enumerate()
        .map(|(i, u)| UserChannelSpec::new(i, db_to_linear(u.mean_db), u.fading).map_err(Into::into))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySweepConfig {
    pub users: Vec<UserConfig>,
    /// Weight points `i = 1..points`, `w = (sin θ_i, cos θ_i)`, `θ_i = i·π/(2(points+1))`.
    pub points: usize,
    pub slots: usize,
    pub seed: u64,
    pub delta0: f64,
    pub bandwidth: f64,
    pub formulation: Formulation,
}

impl Default for BoundarySweepConfig {
    fn default() -> Self {
        Self {
            users: vec![UserConfig::new(5.0, rician10()), UserConfig::new(15.0, rician10())],
            points: 199,
            slots: 100_000,
            seed: 1,
            delta0: 1.0,
            bandwidth: 1.0,
            formulation: Formulation::default(),
        }
    }
}

impl CommandConfig for BoundarySweepConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if o.episodes.is_some() {
            return Err(no_flag("episodes", "boundary-sweep"));
        }
        self.seed = o.seed.unwrap_or(self.seed);
        self.slots = o.slots.unwrap_or(self.slots);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.users.len() != 2 {
            return Err(config_error("boundary-sweep needs exactly two users"));
        }
        user_specs(&self.users)?;
        at_least("points", self.points, 1)?;
        at_least("slots", self.slots, 1)?;
        positive("delta0", self.delta0)?;
        positive("bandwidth", self.bandwidth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationCdfConfig {
    pub num_users: usize,
    pub mean_snr_db: MeanSnrDistribution,
    pub fading: Fading,
    pub episodes: usize,
    pub gamma: f64,
    /// SUWO tuning slots per user.
    pub tuning_slots_per_user: usize,
    pub measurement_slots: usize,
    pub seed: u64,
    pub delta0: f64,
    pub bandwidth: f64,
    pub formulation: Formulation,
}

impl Default for EstimationCdfConfig {
    fn default() -> Self {
        Self {
            num_users: 6,
            mean_snr_db: MeanSnrDistribution::default(),
            fading: rician10(),
            episodes: 50,
            gamma: 1e4,
            tuning_slots_per_user: 1000,
            measurement_slots: 20_000,
            seed: 1,
            delta0: 1.0,
            bandwidth: 1.0,
            formulation: Formulation::default(),
        }
    }
}

impl CommandConfig for EstimationCdfConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        self.seed = o.seed.unwrap_or(self.seed);
        self.episodes = o.episodes.unwrap_or(self.episodes);
        self.measurement_slots = o.slots.unwrap_or(self.measurement_slots);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        at_least("num_users", self.num_users, 1)?;
        at_least("episodes", self.episodes, 1)?;
        at_least("measurement_slots", self.measurement_slots, 1)?;
        if !(self.gamma >= 1.0) {
            return Err(config_error("gamma must be >= 1"));
        }
        self.mean_snr_db.draw(1, 0)?;
        UserChannelSpec::new(0, 1.0, self.fading)?;
        positive("delta0", self.delta0)?;
        positive("bandwidth", self.bandwidth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// User counts of the traced runs with `m_k = (k + 5)` dB.
    pub trace_users: Vec<usize>,
    pub trace_epsilon_hat: f64,
    pub trace_max_iterations: usize,
    /// User counts and convergence errors of the random-episode study.
    pub probability_users: Vec<usize>,
    pub probability_epsilon_hats: Vec<f64>,
    pub episodes: usize,
    pub iteration_cap: usize,
    pub mean_snr_db: MeanSnrDistribution,
    pub fading: Fading,
    pub seed: u64,
    pub formulation: Formulation,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            trace_users: vec![5, 10],
            trace_epsilon_hat: 1e-4,
            trace_max_iterations: 200,
            probability_users: vec![3, 6, 9],
            probability_epsilon_hats: vec![1e-3],
            episodes: 200,
            iteration_cap: 50,
            mean_snr_db: MeanSnrDistribution::default(),
            fading: rician10(),
            seed: 1,
            formulation: Formulation::default(),
        }
    }
}

impl CommandConfig for ConvergenceConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if o.slots.is_some() {
            return Err(no_flag("slots", "convergence"));
        }
        self.seed = o.seed.unwrap_or(self.seed);
        self.episodes = o.episodes.unwrap_or(self.episodes);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for k in self.trace_users.iter().chain(&self.probability_users) {
            at_least("user count", *k, 1)?;
        }
        positive("trace_epsilon_hat", self.trace_epsilon_hat)?;
        for e in &self.probability_epsilon_hats {
            positive("probability_epsilon_hats", *e)?;
        }
        at_least("trace_max_iterations", self.trace_max_iterations, 1)?;
        at_least("iteration_cap", self.iteration_cap, 1)?;
        self.mean_snr_db.draw(1, 0)?;
        UserChannelSpec::new(0, 1.0, self.fading)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetComparisonConfig {
    pub num_users: usize,
    pub mean_snr_db: MeanSnrDistribution,
    pub fading: Fading,
    pub episodes: usize,
    /// Tuning budgets in slots.
    pub budgets: Vec<usize>,
    pub suwo_gammas: Vec<f64>,
    pub include_hfs: bool,
    /// Slots with frozen weights used to score each policy.
    pub evaluation_slots: usize,
    pub epsilon_hat: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub delta0: f64,
    pub bandwidth: f64,
    pub formulation: Formulation,
}

impl Default for BudgetComparisonConfig {
    fn default() -> Self {
        Self {
            num_users: 3,
            mean_snr_db: MeanSnrDistribution::default(),
            fading: rician10(),
            episodes: 50,
            budgets: vec![20, 40, 60, 80, 160, 320, 640],
            suwo_gammas: vec![100.0, 1000.0],
            include_hfs: true,
            evaluation_slots: 20_000,
            epsilon_hat: 1e-4,
            max_iterations: 200,
            seed: 1,
            delta0: 1.0,
            bandwidth: 1.0,
            formulation: Formulation::default(),
        }
    }
}

impl CommandConfig for BudgetComparisonConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        self.seed = o.seed.unwrap_or(self.seed);
        self.episodes = o.episodes.unwrap_or(self.episodes);
        self.evaluation_slots = o.slots.unwrap_or(self.evaluation_slots);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        at_least("num_users", self.num_users, 1)?;
        at_least("episodes", self.episodes, 1)?;
        at_least("evaluation_slots", self.evaluation_slots, 1)?;
        if self.budgets.is_empty() || self.budgets.iter().any(|b| *b < 2) {
            return Err(config_error("budgets must be non-empty and each >= 2 slots"));
        }
        if self.suwo_gammas.iter().any(|g| !(*g >= 1.0)) {
            return Err(config_error("suwo_gammas must be >= 1"));
        }
        positive("epsilon_hat", self.epsilon_hat)?;
        at_least("max_iterations", self.max_iterations, 1)?;
        self.mean_snr_db.draw(1, 0)?;
        UserChannelSpec::new(0, 1.0, self.fading)?;
        positive("delta0", self.delta0)?;
        positive("bandwidth", self.bandwidth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineCommandConfig {
    pub scenario: OnlineScenario,
    pub online: OnlineConfig,
    pub suwo_gamma: f64,
    /// Number of paired runs, each on its own channel realization.
    pub episodes: usize,
    pub slots: usize,
    pub seed: u64,
}

impl Default for OnlineCommandConfig {
    fn default() -> Self {
        Self {
            scenario: default_mobility_scenario(),
            // the designer refreshes after every slot
            online: OnlineConfig {
                recompute_period: 1,
                ..OnlineConfig::default()
            },
            suwo_gamma: 100.0,
            episodes: 20,
            slots: 2000,
            seed: 1,
        }
    }
}

impl CommandConfig for OnlineCommandConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        self.seed = o.seed.unwrap_or(self.seed);
        self.episodes = o.episodes.unwrap_or(self.episodes);
        self.slots = o.slots.unwrap_or(self.slots);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.online.validate()?;
        at_least("episodes", self.episodes, 1)?;
        at_least("slots", self.slots, self.online.beta)?;
        if !(self.suwo_gamma >= 1.0) {
            return Err(config_error("suwo_gamma must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSweepConfig {
    pub sigmas: Vec<f64>,
    /// Linear mean SNR shared by both users.
    pub mean_snr: f64,
    pub points: usize,
    pub slots: usize,
    pub seed: u64,
    pub delta0: f64,
    pub bandwidth: f64,
    pub formulation: Formulation,
}

impl Default for VarianceSweepConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.25, 0.5, 0.75],
            mean_snr: 1.0,
            points: 199,
            slots: 100_000,
            seed: 1,
            delta0: 1.0,
            bandwidth: 1.0,
            formulation: Formulation::default(),
        }
    }
}

impl CommandConfig for VarianceSweepConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if o.episodes.is_some() {
            return Err(no_flag("episodes", "variance-sweep"));
        }
        self.seed = o.seed.unwrap_or(self.seed);
        self.slots = o.slots.unwrap_or(self.slots);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(config_error("sigmas must not be empty"));
        }
        for s in &self.sigmas {
            positive("sigma", *s)?;
        }
        positive("mean_snr", self.mean_snr)?;
        at_least("points", self.points, 1)?;
        at_least("slots", self.slots, 1)?;
        positive("delta0", self.delta0)?;
        positive("bandwidth", self.bandwidth)
    }
}
