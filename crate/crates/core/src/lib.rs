//! Max-weight scheduler weight design from SNR means and variances.
//!
//! The crate builds an outer bound on the achievable average-rate region of
//! a max-weight scheduler from per-user SNR statistics, solves conic programs
//! over that bound, and iterates towards the weights that maximize the
//! sum-log utility. A slot-level simulator and a density-quadrature oracle
//! are included for verification.

// `!(x > 0.0)` is the NaN-rejecting form used by input validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod conic;
pub mod error;
pub mod mws;
pub mod online;
pub mod pdf;
pub mod region;
pub mod solver;
pub mod stats;

pub use channel::{
    analytic_moments, mobility_snr_mean, sample_snr, ChannelState, Episode, EpisodeChannel, Fading,
    MeanSnrDistribution, MobilityScenario, UserChannelSpec,
};
pub use error::{Error, Result};
pub use mws::{
    geometric_mean, hfs_weights, measure_rates, mws_select, suwo_step, utility, RateVector,
    ScheduleAction, SuwoState, TieBreak, Utility, Weights,
};
pub use region::{
    build_region, estimate_rates, optimal_rates, region_diameter_bound, Formulation, RegionProblem,
    RegionSolution,
};
pub use solver::{initial_weights, solve_weights, weight_update, MvwoConfig, SolverTrace};
pub use stats::{SnrStats, SnrWindow};
pub use online::{
    compare_reports, run_online, OnlineConfig, OnlineLoop, OnlineReport, OnlineScenario, Policy,
};
pub use pdf::{rate_via_pdf, schedule_probability, SnrDensity};
