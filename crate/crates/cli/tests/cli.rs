use std::process::Command as Process;

use mvwo_cli::commands::online::OnlineComparisonRecord;
use mvwo_cli::commands::SweepRow;
use mvwo_cli::config::{
    BoundarySweepConfig, BudgetComparisonConfig, CommandConfig, ConvergenceConfig, EstimationCdfConfig,
    OnlineCommandConfig, Overrides, VarianceSweepConfig,
};
use mvwo_cli::output::{sha256_hex, CommandOutput};
use mvwo_cli::{run, Command};
use mvwo_core::channel::{EpisodeChannel, Fading, UserChannelSpec};
use mvwo_core::mws::{geometric_mean, mws_select, RateMeter, SuwoState};
use mvwo_core::online::{OnlineScenario, Policy};
use mvwo_core::solver::{solve_weights, MvwoConfig};
use mvwo_core::stats::SnrStats;
use serde_json::{json, Value};

fn exec(cmd: Command, cfg: Value) -> CommandOutput {
    run(cmd, Some(cfg), &Overrides::default(), Some(1)).unwrap()
}

fn rows<T: serde::de::DeserializeOwned>(out: &CommandOutput, file: &str) -> Vec<T> {
    let a = out.artifact(file).unwrap_or_else(|| panic!("missing {file}"));
    csv::Reader::from_reader(a.bytes.as_slice())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

fn header(out: &CommandOutput, file: &str) -> String {
    let bytes = &out.artifact(file).unwrap().bytes;
    String::from_utf8_lossy(bytes).lines().next().unwrap().to_string()
}

#[test]
fn defaults_round_trip_through_json() {
    fn check<C: CommandConfig + PartialEq + std::fmt::Debug>() {
        let v = serde_json::to_value(C::default()).unwrap();
        assert_eq!(C::resolve(Some(v), &Overrides::default()).unwrap(), C::default());
        assert_eq!(C::resolve(Some(json!({})), &Overrides::default()).unwrap(), C::default());
    }
    check::<BoundarySweepConfig>();
    check::<EstimationCdfConfig>();
    check::<ConvergenceConfig>();
    check::<BudgetComparisonConfig>();
    check::<OnlineCommandConfig>();
    check::<VarianceSweepConfig>();
}

#[test]
fn bad_configs_are_rejected() {
    let o = Overrides::default();
    let err = BoundarySweepConfig::resolve(Some(json!({ "pionts": 3 })), &o).unwrap_err();
    assert_eq!(err.kind(), "config");
    let one_user = json!({ "users": [{ "mean_db": 5.0 }] });
    assert!(BoundarySweepConfig::resolve(Some(one_user), &o).is_err());
    let flag = Overrides {
        episodes: Some(3),
        ..Overrides::default()
    };
    assert_eq!(BoundarySweepConfig::resolve(None, &flag).unwrap_err().kind(), "config");
    let slots = Overrides {
        slots: Some(3),
        ..Overrides::default()
    };
    assert!(ConvergenceConfig::resolve(None, &slots).is_err());
    assert!(BudgetComparisonConfig::resolve(Some(json!({ "budgets": [1] })), &o).is_err());
    let e = EstimationCdfConfig::resolve(Some(json!({ "fading": { "model": "rician", "k_factor": -1.0 } })), &o)
        .unwrap_err();
    assert_eq!(e.kind(), "computation");
}

#[test]
fn overrides_replace_config_values() {
    let o = Overrides {
        seed: Some(9),
        episodes: Some(4),
        slots: Some(123),
    };
    let c = EstimationCdfConfig::resolve(None, &o).unwrap();
    assert_eq!((c.seed, c.episodes, c.measurement_slots), (9, 4, 123));
    let b = BudgetComparisonConfig::resolve(None, &o).unwrap();
    assert_eq!((b.seed, b.episodes, b.evaluation_slots), (9, 4, 123));
}

#[test]
fn boundary_sweep_rows_and_sidecar() {
    let out = exec(Command::BoundarySweep, json!({ "points": 9, "slots": 2000 }));
    assert_eq!(header(&out, "boundary.csv"), "index,w1,w2,est_1,est_2,meas_1,meas_2,gap_1,gap_2");
    let r: Vec<SweepRow> = rows(&out, "boundary.csv");
    assert_eq!(r.len(), 9);
    for (i, row) in r.iter().enumerate() {
        assert_eq!(row.index, i + 1);
        assert!((row.w1.hypot(row.w2) - 1.0).abs() < 1e-12);
    }
    // w1 grows along the sweep, so user 0's estimate does too
    assert!(r.windows(2).all(|p| p[1].est_1 >= p[0].est_1 - 1e-9));

    let side: Value = serde_json::from_slice(&out.sidecar().unwrap().bytes).unwrap();
    assert_eq!(side["command"], "boundary-sweep");
    assert_eq!(side["config"]["points"], 9);
    assert_eq!(side["input_hash"].as_str().unwrap().len(), 64);
    let file = &side["outputs"][0];
    assert_eq!(file["file"], "boundary.csv");
    assert_eq!(file["sha256"], sha256_hex(&out.artifacts[0].bytes));

    let other = exec(Command::BoundarySweep, json!({ "points": 9, "slots": 2000, "seed": 2 }));
    assert_ne!(out.input_hash(), other.input_hash());
}

#[test]
fn deterministic_channels_give_the_tdma_segment() {
    let det = json!({ "model": "deterministic" });
    let cfg = json!({
        "users": [{ "mean_db": 5.0, "fading": det }, { "mean_db": 15.0, "fading": det }],
        "points": 19,
        "slots": 10,
    });
    let out = exec(Command::BoundarySweep, cfg);
    let solo = [(1.0 + 10f64.powf(0.5)).log2(), (1.0 + 10f64.powf(1.5)).log2()];
    for r in rows::<SweepRow>(&out, "boundary.csv") {
        let on_segment = r.est_1 / solo[0] + r.est_2 / solo[1];
        assert!((on_segment - 1.0).abs() < 1e-4, "{r:?}");
    }
}

#[test]
fn measured_boundary_noise_shrinks_with_horizon() {
    let run_t = |slots: usize, seed: u64| -> Vec<SweepRow> {
        let out = exec(Command::BoundarySweep, json!({ "points": 15, "slots": slots, "seed": seed }));
        rows(&out, "boundary.csv")
    };
    let reference = run_t(200_000, 99);
    let spread = |slots: usize| -> f64 {
        (1..=4u64)
            .flat_map(|s| {
                let r = run_t(slots, s);
                r.iter()
                    .zip(&reference)
                    .map(|(a, b)| (a.meas_1 - b.meas_1).powi(2) + (a.meas_2 - b.meas_2).powi(2))
                    .collect::<Vec<_>>()
            })
            .sum()
    };
    let (short, long) = (spread(100), spread(10_000));
    assert!(short > 10.0 * long, "short {short} long {long}");
}

#[test]
fn commands_are_byte_deterministic() {
    let cases = [
        (Command::BoundarySweep, json!({ "points": 5, "slots": 500 })),
        (Command::EstimationCdf, json!({ "num_users": 3, "episodes": 3, "measurement_slots": 500 })),
        (
            Command::Convergence,
            json!({ "trace_users": [3], "probability_users": [2], "episodes": 3, "trace_epsilon_hat": 1e-3 }),
        ),
        (
            Command::BudgetComparison,
            json!({ "episodes": 2, "budgets": [20, 40], "evaluation_slots": 500 }),
        ),
        (
            Command::Online,
            json!({ "episodes": 2, "slots": 300, "online": { "recompute_period": 25 } }),
        ),
        (Command::VarianceSweep, json!({ "sigmas": [0.3], "points": 5, "slots": 500 })),
    ];
    for (cmd, cfg) in cases {
        let a = exec(cmd, cfg.clone());
        // thread count must not matter
        let b = run(cmd, Some(cfg), &Overrides::default(), Some(3)).unwrap();
        assert_eq!(a.artifacts, b.artifacts, "{cmd:?}");
        assert_eq!(a.sidecar().unwrap(), b.sidecar().unwrap(), "{cmd:?}");
    }
}

#[test]
fn estimation_records_are_consistent() {
    let out = exec(
        Command::EstimationCdf,
        json!({ "num_users": 3, "episodes": 4, "measurement_slots": 2000, "tuning_slots_per_user": 200 }),
    );
    let recs: Vec<mvwo_cli::commands::estimation::EstimationErrorRecord> = rows(&out, "estimation.csv");
    assert_eq!(recs.len(), 4);
    for r in &recs {
        assert!(r.measured > 0.0);
        assert!((r.nu - (r.estimated - r.measured) / r.measured).abs() < 1e-12);
    }
}

#[test]
fn convergence_outputs() {
    let cfg = json!({
        "trace_users": [3, 4],
        "trace_epsilon_hat": 1e-3,
        "probability_users": [2, 3],
        "probability_epsilon_hats": [1e-2, 1e-3],
        "episodes": 5,
    });
    let out = exec(Command::Convergence, cfg);
    for k in [3, 4] {
        let text = String::from_utf8(out.artifact(&format!("trace_k{k}.csv")).unwrap().bytes.clone()).unwrap();
        assert!(text.starts_with("iteration,gap,a,b,u_norm,alignment,w_0"));
        let last = text.lines().last().unwrap();
        let al: f64 = last.split(',').nth(5).unwrap().parse().unwrap();
        assert!((al - 1.0).abs() < 1e-12);
    }
    let recs: Vec<mvwo_cli::commands::convergence::ProbabilityRecord> =
        rows(&out, "convergence_probability.csv");
    assert_eq!(recs.len(), 2 * 2 * 5);
    let summary: Vec<mvwo_cli::commands::convergence::ProbabilitySummary> = rows(&out, "convergence_summary.csv");
    assert_eq!(summary.len(), 4);
    assert_eq!((summary[1].num_users, summary[1].epsilon_hat), (2, 1e-3));
    // K=1 is trivially converged
    let single = exec(
        Command::Convergence,
        json!({ "trace_users": [], "probability_users": [1], "episodes": 3 }),
    );
    let s: Vec<mvwo_cli::commands::convergence::ProbabilitySummary> = rows(&single, "convergence_summary.csv");
    assert_eq!(s[0].converged_fraction, 1.0);
}

#[test]
fn budget_rows_cover_every_policy() {
    let out = exec(
        Command::BudgetComparison,
        json!({ "episodes": 2, "budgets": [20, 80], "evaluation_slots": 3000 }),
    );
    let recs: Vec<mvwo_cli::commands::budget::BudgetRecord> = rows(&out, "budget.csv");
    assert_eq!(recs.len(), 2 * 2 * 4);
    let policies: Vec<&str> = recs[..4].iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(policies, ["mvwo", "suwo_g100", "suwo_g1000", "hfs"]);
    for r in &recs {
        assert!((r.geometric_mean.ln() * 3.0 - r.utility).abs() < 1e-9);
    }
    let no_hfs = exec(
        Command::BudgetComparison,
        json!({ "episodes": 1, "budgets": [20], "evaluation_slots": 100, "include_hfs": false, "suwo_gammas": [] }),
    );
    assert_eq!(rows::<mvwo_cli::commands::budget::BudgetRecord>(&no_hfs, "budget.csv").len(), 1);
}

#[test]
fn online_outputs_and_identity() {
    let out = exec(
        Command::Online,
        json!({ "episodes": 2, "slots": 400, "online": { "recompute_period": 20 } }),
    );
    let recs: Vec<OnlineComparisonRecord> = rows(&out, "online_comparison.csv");
    assert_eq!(recs.len(), 2 * 4);
    for r in &recs {
        assert!((r.f_difference - r.k_ln_gm_ratio).abs() < 1e-9);
        assert!((r.f_mvwo - r.f_suwo - r.f_difference).abs() < 1e-9);
    }
    for name in ["online_ep0_mvwo.csv", "online_ep1_suwo.csv", "online_events.json"] {
        assert!(out.artifact(name).is_some(), "{name}");
    }
    assert_eq!(header(&out, "online_ep0_mvwo.csv"), "slot,time,f,gm,r_0,r_1,r_2");
    let events: Value = serde_json::from_slice(&out.artifact("online_events.json").unwrap().bytes).unwrap();
    assert_eq!(events[0]["policy"], "mvwo");
    assert!(events[0]["refreshes"].as_u64().unwrap() >= 19);
}

/// Long-run rates of SUWO(γ) on one realization.
fn suwo_gm(users: &[UserChannelSpec], gamma: f64, slots: usize, seed: u64) -> f64 {
    let mut ch = EpisodeChannel::new(users, seed);
    let mut st = SuwoState::new(users.len(), gamma).unwrap();
    let mut meter = RateMeter::new(users.len());
    for _ in 0..slots {
        let s = ch.next_state();
        let a = st.schedule(&s);
        meter.record(a, &s);
    }
    geometric_mean(&meter.rates(1.0))
}

#[test]
fn zero_mobility_ratio_matches_offline_prediction() {
    let mut cfg = OnlineCommandConfig::default();
    let OnlineScenario::Mobility { mobility, .. } = &mut cfg.scenario else {
        unreachable!()
    };
    mobility.speed = 0.0;
    let mobility = mobility.clone();
    cfg.online.beta = 200;
    cfg.online.recompute_period = 50;
    cfg.episodes = 3;
    cfg.slots = 6000;
    let out = exec(Command::Online, serde_json::to_value(&cfg).unwrap());
    let recs: Vec<OnlineComparisonRecord> = rows(&out, "online_comparison.csv");
    // skip the first second, before the window has filled and SUWO has settled
    let online: Vec<f64> = recs.iter().filter(|r| r.slot > 1000).map(|r| r.gm_ratio).collect();
    let online = online.iter().sum::<f64>() / online.len() as f64;

    let users: Vec<UserChannelSpec> = (0..3)
        .map(|u| UserChannelSpec::new(u, mvwo_core::mobility_snr_mean(&mobility, u, 0), mobility.fading).unwrap())
        .collect();
    let (means, vars) = users.iter().map(mvwo_core::analytic_moments).unzip();
    let stats = SnrStats::new(means, vars, 0).unwrap();
    let (w, _) = solve_weights(&stats, 1.0, 1.0, &MvwoConfig::default()).unwrap();
    let slots = 200_000;
    let mut ch = EpisodeChannel::new(&users, 5);
    let mut meter = RateMeter::new(3);
    for _ in 0..slots {
        let s = ch.next_state();
        meter.record(mws_select(&w, &s), &s);
    }
    let predicted = geometric_mean(&meter.rates(1.0)) / suwo_gm(&users, cfg.suwo_gamma, slots, 5);
    assert!((online - predicted).abs() < 0.02, "online {online} offline {predicted}");
}

#[test]
fn variance_sweep_limits() {
    let out = exec(
        Command::VarianceSweep,
        json!({ "sigmas": [0.02, 0.75], "points": 19, "slots": 20_000 }),
    );
    let s: Vec<mvwo_cli::commands::variance::SigmaSummary> = rows(&out, "variance_summary.csv");
    assert!(s[0].mean_gap.abs() < 0.01, "{:?}", s[0]);
    assert!(s[1].mean_gap > s[0].mean_gap);
    assert!(s[1].contained_fraction >= 0.95);
    let r: Vec<mvwo_cli::commands::variance::VarianceRow> = rows(&out, "variance_boundary.csv");
    assert_eq!(r.len(), 38);
}

#[test]
fn binary_writes_files_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "points": 3, "slots": 100 }"#).unwrap();
    let out_dir = dir.path().join("out");
    let ok = Process::new(env!("CARGO_BIN_EXE_mvwo"))
        .args(["boundary-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seed", "4", "--parallel", "1"])
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let side: Value = serde_json::from_slice(&std::fs::read(out_dir.join("boundary-sweep.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["seed"], 4);
    let csv_bytes = std::fs::read(out_dir.join("boundary.csv")).unwrap();
    assert_eq!(side["outputs"][0]["sha256"], sha256_hex(&csv_bytes));

    let bad = Process::new(env!("CARGO_BIN_EXE_mvwo"))
        .args(["boundary-sweep", "--episodes", "3", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let missing = Process::new(env!("CARGO_BIN_EXE_mvwo"))
        .args(["online", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    let err: Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn fading_config_accepts_every_model() {
    let cfg = json!({
        "users": [
            { "mean_db": 3.0, "fading": { "model": "lognormal", "sigma": 0.5 } },
            { "mean_db": 8.0 },
        ],
        "points": 3,
        "slots": 100,
    });
    let c = BoundarySweepConfig::resolve(Some(cfg), &Overrides::default()).unwrap();
    assert_eq!(c.users[1].fading, Fading::Rician { k_factor: 10.0 });
    assert_eq!(c.users[0].fading, Fading::Lognormal { sigma: 0.5 });
    let p: Policy = serde_json::from_value(json!({ "policy": "suwo", "gamma": 10.0 })).unwrap();
    assert_eq!(p, Policy::Suwo { gamma: 10.0 });
}
