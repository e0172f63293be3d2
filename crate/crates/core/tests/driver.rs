mod common;

use cmdp_lab::driver::{
    burn_in, resolve_config, run, run_critic_phase, run_npg_phase, AlgoConfig, AlgoSettings, EpochContext,
    EstimatorMode,
};
use cmdp_lab::model::validate_unichain;
use cmdp_lab::oracle::{critic_ground_truth, npg_exact, PolicyChain};
use cmdp_lab::sampling::{CriticState, Phase, RngStream, StreamId};
use cmdp_lab::scalar::dist_sq;
use cmdp_lab::{CmdpModel, EnvSpec, FeatureMap, Features, Model, Signal, SoftmaxPolicy};
use common::*;

fn features(m: &Model) -> (Features, Features) {
    (
        Features::one_hot(m.n_states(), Signal::Reward),
        Features::one_hot(m.n_states(), Signal::Cost),
    )
}

fn config(m: &Model, settings: AlgoSettings) -> AlgoConfig {
    let (fr, fc) = features(m);
    resolve_config(m, &fr, &fc, &settings).unwrap()
}

fn exact_phase_config(m: &Model, h: usize, gamma_xi: f64, gamma_omega: f64) -> AlgoConfig {
    let mut s = AlgoSettings::new(1 << 12);
    s.inner_iters = Some(h);
    s.t_max = Some(8);
    s.gamma_xi = Some(gamma_xi);
    s.gamma_omega = Some(gamma_omega);
    s.c_gamma = Some(2.0);
    s.mode = EstimatorMode::Exact;
    config(m, s)
}

#[test]
fn burn_in_miss_probability() {
    let m = funnel(0.5);
    let st = validate_unichain(&m).unwrap();
    let p = uniform(&m);
    let n = 100_000;
    let mut misses = 0;
    for i in 0..n {
        let mut rng = RngStream::new(5, StreamId::new(i, Phase::BurnIn, 0));
        let mut trace = Vec::new();
        let b = burn_in(&m, &p, &st, 0, 3, &mut rng, &mut trace);
        assert_eq!(trace.len(), 3);
        if !b.hit {
            misses += 1;
            assert_eq!(b.state, 0);
        }
    }
    let f = misses as f64 / n as f64;
    assert!((f - 0.125).abs() <= binomial_band(0.125, n as usize), "{f}");
}

#[test]
fn exact_critic_reaches_the_fixed_point() {
    let m = two_ring();
    let p = uniform(&m);
    let cfg = exact_phase_config(&m, 200, 0.1, 0.1);
    let chain = PolicyChain::new(&m, &p).unwrap();
    let ctx = EpochContext {
        model: &m,
        policy: &p,
        config: &cfg,
        epoch: 0,
        chain: Some(&chain),
    };
    for g in Signal::BOTH {
        let f = Features::one_hot(2, g);
        let truth = critic_ground_truth(&m, &p, &f, 2.0, g).unwrap();
        let (mut state, mut trace) = (0, Vec::new());
        let xi = run_critic_phase(&ctx, &f, g, &mut state, &mut trace).unwrap();
        assert!(truth.projected_error_sq(&xi.joined()).sqrt() < 1e-6, "{g}");
        assert!(trace.len() >= 200);
    }
}

#[test]
fn exact_npg_matches_the_regularised_direction() {
    for (name, m) in zoo() {
        let p = &random_policies(&m, 1, 0.5, 3)[0];
        let cfg = exact_phase_config(&m, 500, 0.1, 0.5);
        let chain = PolicyChain::new(&m, p).unwrap();
        let ctx = EpochContext {
            model: &m,
            policy: p,
            config: &cfg,
            epoch: 0,
            chain: Some(&chain),
        };
        for g in Signal::BOTH {
            let f = Features::one_hot(m.n_states(), g);
            let truth = critic_ground_truth(&m, p, &f, 2.0, g).unwrap();
            let xi = CriticState::from_joined(&truth.xi_star);
            let (mut state, mut trace) = (0, Vec::new());
            let omega = run_npg_phase(&ctx, &f, &xi, g, &mut state, &mut trace).unwrap();
            let want = npg_exact(&m, p, g, cfg.eps_reg).unwrap().regularized;
            let err = dist_sq(&omega, &want).sqrt();
            assert!(err < 1e-6, "{name} {g}: {err}");
        }
    }
}

#[test]
fn exact_mode_draws_the_same_first_epoch() {
    let m = build(EnvSpec::FunnelRing { p: 0.5, k: 3 });
    let (fr, fc) = features(&m);
    let mut s = AlgoSettings::new(1 << 12);
    s.t_max = Some(16);
    s.seed = 8;
    let sampled = config(&m, s.clone());
    s.mode = EstimatorMode::Exact;
    let exact = config(&m, s);
    let a = run(&m, &fr, &fc, &sampled).unwrap();
    let b = run(&m, &fr, &fc, &exact).unwrap();
    let n = a.epochs[0].samples_used;
    assert_eq!(n, b.epochs[0].samples_used);
    assert_eq!(a.trace[..n], b.trace[..n]);
}

#[test]
fn sample_accounting_and_continuity() {
    for (name, m) in zoo() {
        let (fr, fc) = features(&m);
        let mut s = AlgoSettings::new(1 << 13);
        s.t_max = Some(32);
        s.seed = 21;
        let cfg = config(&m, s);
        let out = run(&m, &fr, &fc, &cfg).unwrap();
        assert_eq!(out.epochs.len(), cfg.epochs, "{name}");
        let used: usize = out.epochs.iter().map(|e| e.samples_used).sum();
        assert_eq!(used, out.trace.len(), "{name}");
        let min_epoch = cfg.burn_in + 4 * cfg.inner_iters;
        let max_epoch = cfg.burn_in + 4 * cfg.inner_iters * cfg.t_max;
        for e in &out.epochs {
            assert!((min_epoch..=max_epoch).contains(&e.samples_used), "{name}");
        }
        for w in out.trace.windows(2) {
            assert_eq!(w[0].s_next, w[1].s, "{name}: the chain is never restarted");
        }
        for z in &out.trace {
            assert_eq!(z.r, m.reward(z.s, z.a));
            assert_eq!(z.c, m.cost(z.s, z.a));
        }
    }
}

#[test]
fn multiplier_stays_in_its_interval() {
    for spec in [EnvSpec::ConstrainedSelfLoop, EnvSpec::FunnelRing { p: 0.5, k: 3 }] {
        let m = build(spec);
        let (fr, fc) = features(&m);
        for beta in [0.0, 0.05, 5.0, 1e3] {
            let mut s = AlgoSettings::new(1 << 12);
            s.t_max = Some(16);
            s.beta = Some(beta);
            let cfg = config(&m, s);
            let out = run(&m, &fr, &fc, &cfg).unwrap();
            let upper = cfg.lambda_max();
            for e in &out.epochs {
                assert!((0.0..=upper).contains(&e.lambda));
            }
            assert!((0.0..=upper).contains(&out.final_lambda));
            if beta == 0.0 {
                assert_eq!(out.final_lambda, 0.0);
            }
        }
    }
}

#[test]
fn theta_moves_along_the_combined_direction() {
    let m = build(EnvSpec::FunnelRing { p: 0.5, k: 3 });
    let (fr, fc) = features(&m);
    let mut s = AlgoSettings::new(1 << 12);
    s.t_max = Some(16);
    let cfg = config(&m, s);
    let out = run(&m, &fr, &fc, &cfg).unwrap();
    for w in out.epochs.windows(2) {
        let (e, next) = (&w[0], &w[1]);
        for i in 0..e.theta.len() {
            let want = e.theta[i] + cfg.alpha * (e.omega_r[i] + e.lambda * e.omega_c[i]);
            assert!((next.theta[i] - want).abs() < 1e-12);
        }
        let lambda = (e.lambda - cfg.beta * e.eta_c).clamp(0.0, cfg.lambda_max());
        assert!((next.lambda - lambda).abs() < 1e-12);
    }
}

#[test]
fn default_schedule_shape() {
    let m = self_loop();
    let t = 1 << 16;
    let cfg = config(&m, AlgoSettings::new(t));
    assert_eq!(cfg.inner_iters, 16);
    assert_eq!(cfg.t_max, t);
    assert_eq!(cfg.alpha, 1.0 / 256.0);
    assert_eq!(cfg.beta, 1.0 / 256.0);
    let per_epoch = cfg.burn_in + 4 * 16 * 17;
    assert_eq!(cfg.epochs, t / per_epoch);

    // a non power of two rounds the level budget down and the iteration count up
    let cfg = config(&m, AlgoSettings::new(3000));
    assert_eq!(cfg.t_max, 2048);
    assert_eq!(cfg.inner_iters, 12);

    // a funnel needs a longer burn-in than a ring that starts recurrent
    let fun = config(&funnel(0.1), AlgoSettings::new(t));
    assert!(fun.burn_in > cfg.burn_in);
}

#[test]
fn constrained_self_loop_end_to_end() {
    let m = self_loop();
    let (fr, fc) = features(&m);
    let mut s = AlgoSettings::new(1 << 16);
    s.seed = 4;
    let cfg = config(&m, s);
    let out = run(&m, &fr, &fc, &cfg).unwrap();
    assert!(out.trace.len() <= cfg.total_steps + cfg.expected_epoch_samples() as usize * 4);
    // the unconstrained optimum plays action 0 and violates the constraint;
    // the learned policy stays close to the boundary instead
    let pi0 = SoftmaxPolicy::for_model(&m, out.final_theta.clone()).unwrap().action_distribution(0)[0];
    assert!(pi0 < 0.8, "{pi0}");
    assert!(out.final_j_c > -0.3, "{}", out.final_j_c);
    assert!(out.final_lambda > 0.0);
}

#[test]
fn single_precision_run() {
    let m: CmdpModel<f32> = EnvSpec::FunnelRing { p: 0.5, k: 3 }.build().unwrap();
    let m64 = build(EnvSpec::FunnelRing { p: 0.5, k: 3 });
    let mut s = AlgoSettings::new(1 << 12);
    s.t_max = Some(16);
    let cfg = config(&m64, s);
    let fr = FeatureMap::<f32>::one_hot(4, Signal::Reward);
    let fc = FeatureMap::<f32>::one_hot(4, Signal::Cost);
    let out = run(&m, &fr, &fc, &cfg).unwrap();
    assert_eq!(out.epochs.len(), cfg.epochs);
    assert!(out.final_theta.iter().all(|x| x.is_finite()));
    assert!((0.0..=1.0).contains(&out.final_j_r));
}
