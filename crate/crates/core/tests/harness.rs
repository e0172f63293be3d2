mod common;

use std::fs;
use std::path::Path;

use cmdp_lab::driver::AlgoSettings;
use cmdp_lab::harness::{
    diagnostics_report, fit_exponent, random_thetas, read_epochs, read_steps, regret_of, run_experiment, sweep,
    DiagnoseSettings, ExperimentSummary, RunConfig,
};
use cmdp_lab::oracle::{average_objective, solve_cmdp_lp};
use cmdp_lab::{EnvSpec, Signal};
use common::*;

fn small(env: EnvSpec, t: usize, seeds: usize) -> RunConfig {
    let mut algo = AlgoSettings::new(t);
    algo.t_max = Some(16);
    algo.seed = 3;
    let mut cfg = RunConfig::new(env, algo);
    cfg.n_seeds = seeds;
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn frozen_policy_regret_is_noise() {
    let m = self_loop();
    let mut cfg = small(EnvSpec::ConstrainedSelfLoop, 1 << 14, 4);
    cfg.algo.alpha = Some(0.0);
    cfg.algo.beta = Some(0.0);
    let exp = run_experiment(&cfg).unwrap();
    let j_star = solve_cmdp_lp(&m).unwrap().j_r_star;
    let j = average_objective(&m, &uniform(&m), Signal::Reward).unwrap();
    assert!((j_star - 0.5).abs() < 1e-9 && (j - 0.5).abs() < 1e-12);
    for t in &exp.traces {
        // i.i.d. Bernoulli(½) rewards: regret has standard deviation ½√T
        let n = t.realized_t() as f64;
        assert!(n > 0.0);
        assert!(t.regret().abs() <= 3.0 * 0.5 * n.sqrt(), "{}", t.regret());
        assert_eq!(t.final_lambda, 0.0);
    }
}

#[test]
fn zero_epochs_give_an_empty_run() {
    let mut cfg = small(EnvSpec::FunnelRing { p: 0.5, k: 3 }, 1 << 10, 1);
    cfg.algo.epochs = Some(0);
    let exp = run_experiment(&cfg).unwrap();
    let s = &exp.summary.seeds[0];
    assert_eq!((s.realized_t, s.epochs), (0, 0));
    assert_eq!(s.regret, 0.0);
    assert_eq!(s.violation_clipped, 0.0);
}

#[test]
fn csv_round_trip_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvSpec::FunnelRing { p: 0.5, k: 3 }, 1 << 12, 2);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let exp = run_experiment(&cfg).unwrap();
    let summary: ExperimentSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, exp.summary);
    for s in &summary.seeds {
        let steps = read_steps(&dir.path().join(format!("steps_seed{}.csv", s.seed))).unwrap();
        let epochs = read_epochs(&dir.path().join(format!("epochs_seed{}.csv", s.seed))).unwrap();
        assert_eq!(steps.len(), s.realized_t);
        assert_eq!(epochs.len(), s.epochs);
        let regret = regret_of(summary.j_r_star, steps.iter().map(|r| r.reward));
        assert!((regret - s.regret).abs() < 1e-9);
        let clipped: f64 = epochs.iter().map(|e| (-e.j_c).max(0.0)).sum();
        assert!((clipped - s.violation_clipped).abs() < 1e-9);
        assert_eq!(epochs.iter().map(|e| e.samples_used).sum::<usize>(), steps.len());
        assert!(steps.iter().enumerate().all(|(i, r)| r.t == i));
    }
}

#[test]
fn csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvSpec::TwoRing, 1 << 10, 1);
    cfg.out_dir = Some(dir.path().to_path_buf());
    run_experiment(&cfg).unwrap();
    let first = |name: &str| {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(first("steps_seed3.csv"), "t,state,action,reward,cost");
    assert_eq!(first("epochs_seed3.csv"), "k,j_r,j_c,lambda,burn_in_hit,samples_used");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small(EnvSpec::RandomUnichain {
        n_states: 5,
        n_actions: 3,
        n_transient: 1,
        seed: 2,
    }, 1 << 12, 3);
    cfg.out_dir = Some(a.path().to_path_buf());
    run_experiment(&cfg).unwrap();
    cfg.out_dir = Some(b.path().to_path_buf());
    run_experiment(&cfg).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 7);
    assert_eq!(fa, fb);
}

#[test]
fn seeds_differ() {
    let exp = run_experiment(&small(EnvSpec::FunnelRing { p: 0.5, k: 3 }, 1 << 12, 2)).unwrap();
    assert_ne!(exp.traces[0].steps, exp.traces[1].steps);
    assert_eq!(exp.summary.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 4]);
}

#[test]
fn funnel_ring_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(EnvSpec::FunnelRing { p: 0.5, k: 3 }, AlgoSettings::new(1 << 10));
    cfg.n_seeds = 4;
    cfg.out_dir = Some(dir.path().to_path_buf());
    let ts: Vec<usize> = (10..=16).map(|k| 1 << k).collect();
    let table = sweep(&cfg, &ts).unwrap();
    assert_eq!(table.rows.len(), 7);
    for w in table.rows.windows(2) {
        assert!(w[1].regret > w[0].regret, "{} then {}", w[0].regret, w[1].regret);
    }
    let fit = table.regret_fit.unwrap();
    assert!(fit.slope > 0.0 && fit.ci_low <= fit.slope && fit.slope <= fit.ci_high);
    assert!(dir.path().join("sweep.csv").exists() && dir.path().join("sweep.json").exists());
    for t in &ts {
        assert!(dir.path().join(format!("T{t}")).join("summary.json").exists());
    }
    let lines = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(lines.lines().count(), 8);
}

#[test]
fn exponent_fit_recovers_a_power_law() {
    let pts: Vec<(f64, f64)> = (1..=8).map(|k| (2f64.powi(k), 3.0 * 2f64.powi(k).powf(0.5))).collect();
    let fit = fit_exponent(&pts).unwrap();
    assert!((fit.slope - 0.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!(fit_exponent(&pts[..1]).is_err());
    assert!(fit_exponent(&[(1.0, 1.0), (2.0, -1.0), (4.0, 2.0)]).is_err());
}

#[test]
fn diagnostics_on_the_zoo() {
    let settings = DiagnoseSettings {
        n_xi: 200,
        ..DiagnoseSettings::default()
    };
    for (name, m) in zoo() {
        let thetas = random_thetas(&m, 4, 2.0, 1);
        let report = diagnostics_report(&m, &thetas, &settings, 2).unwrap();
        assert_eq!(report.len(), 4);
        for d in &report {
            assert!(d.c_hit >= 0.0 && d.c_tar >= 0.0, "{name}");
            assert!(d.fisher_min_eig >= -1e-12 && d.fisher_min_eig_reg >= settings.eps_reg - 1e-12, "{name}");
            assert!(d.cesaro_slack >= -1e-12, "{name}");
            assert_eq!(d.signals.len(), 2);
            for s in &d.signals {
                assert!(s.subspace_pd_margin >= -1e-12, "{name} {}", s.signal);
                assert!(s.kernel_inclusion_residual <= 1e-10, "{name}");
            }
        }
    }
    // the funnel's hitting time grows like 1/p
    let h = |p| diagnostics_report(&funnel(p), &[vec![0.0; 4]], &settings, 0).unwrap()[0].c_hit;
    assert!(h(0.1) >= 10.0 - 1e-9 && h(0.5) >= 2.0 - 1e-9 && h(0.1) > h(0.5));
}
