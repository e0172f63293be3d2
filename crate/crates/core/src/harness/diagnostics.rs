//! Per-policy checks of the structural conditions the analysis relies on,
//! each reported as a slack or residual so tests can assert on signs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::default_c_gamma;
use crate::error::Result;
use crate::model::{CmdpModel, FeatureMap, Signal, SoftmaxPolicy};
use crate::oracle::{cesaro_tv_series, critic_of, fisher_of, hitting_of, poisson_of, PolicyChain};
use crate::sampling::{critic_sample, CriticState, Transition};
use crate::scalar::{axpy, dot, norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSettings {
    #[serde(default = "ten")]
    pub n_thetas: usize,
    /// Logits are drawn uniformly from `[−scale, scale]`.
    #[serde(default = "two")]
    pub theta_scale: f64,
    /// Random projected critic vectors per `(θ, g)`.
    #[serde(default = "thousand")]
    pub n_xi: usize,
    #[serde(default = "hundred")]
    pub cesaro_horizon: usize,
    #[serde(default)]
    pub c_gamma: Option<f64>,
    #[serde(default = "default_eps_reg")]
    pub eps_reg: f64,
}

fn ten() -> usize {
    10
}
fn two() -> f64 {
    2.0
}
fn thousand() -> usize {
    1000
}
fn hundred() -> usize {
    100
}
fn default_eps_reg() -> f64 {
    1e-3
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self {
            n_thetas: ten(),
            theta_scale: two(),
            n_xi: thousand(),
            cesaro_horizon: hundred(),
            c_gamma: None,
            eps_reg: default_eps_reg(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalDiagnostics {
    pub signal: Signal,
    pub lambda_subspace: Option<f64>,
    pub c_gamma: f64,
    /// `min ξᵀAξ/‖ξ‖² − λ/2` over the sampled projected `ξ`.
    pub subspace_pd_margin: f64,
    /// `max ‖A(z) x‖` over recurrent transitions `z` and unit `x ∈ ker A`.
    pub kernel_inclusion_residual: f64,
    pub kernel_dim: usize,
    /// `max g − min g` over the table; the bounds below are stated for
    /// signals in `[0, 1]` and scale with it.
    pub signal_span: f64,
    /// `2C·span − max|V|`
    pub value_bound_slack: f64,
    /// `(1 + 4C)·span − max|A|`
    pub advantage_bound_slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaDiagnostics {
    pub theta: Vec<f64>,
    pub c_hit: f64,
    pub c_tar: f64,
    pub fisher_min_eig: f64,
    pub fisher_min_eig_reg: f64,
    pub fisher_min_positive_eig: Option<f64>,
    /// `min (C_tar/t − TV_t)` over recurrent starts and `t ≤ horizon`.
    pub cesaro_slack: f64,
    pub signals: Vec<SignalDiagnostics>,
}

pub fn random_thetas(model: &CmdpModel<f64>, n: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.n_states() * model.n_actions();
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect())
        .collect()
}

/// One report per `θ`, all with one-hot critic features.
pub fn diagnostics_report(
    model: &CmdpModel<f64>,
    thetas: &[Vec<f64>],
    settings: &DiagnoseSettings,
    seed: u64,
) -> Result<Vec<ThetaDiagnostics>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    thetas
        .iter()
        .map(|theta| theta_report(model, theta, settings, &mut rng))
        .collect()
}

fn theta_report(
    model: &CmdpModel<f64>,
    theta: &[f64],
    settings: &DiagnoseSettings,
    rng: &mut ChaCha8Rng,
) -> Result<ThetaDiagnostics> {
    let policy = SoftmaxPolicy::for_model(model, theta.to_vec())?;
    let chain = PolicyChain::new(model, &policy)?;
    let hc = hitting_of(&chain)?;
    let fisher = fisher_of(&chain, &policy);
    let fisher_min_eig = fisher.min_eigenvalue();

    let cesaro_slack = chain
        .structure
        .recurrent
        .iter()
        .flat_map(|&s0| {
            cesaro_tv_series(&chain.kernel, chain.d(), s0, settings.cesaro_horizon)
                .into_iter()
                .enumerate()
                .map(|(i, tv)| hc.c_tar / (i + 1) as f64 - tv)
        })
        .fold(f64::INFINITY, f64::min);

    let c_total = hc.c_hit + hc.c_tar;
    let signals = Signal::BOTH
        .iter()
        .map(|&g| signal_report(model, &chain, g, c_total, settings, rng))
        .collect::<Result<Vec<_>>>()?;

    Ok(ThetaDiagnostics {
        theta: theta.to_vec(),
        c_hit: hc.c_hit,
        c_tar: hc.c_tar,
        fisher_min_eig,
        fisher_min_eig_reg: fisher_min_eig + settings.eps_reg,
        fisher_min_positive_eig: fisher.min_positive_eigenvalue(),
        cesaro_slack,
        signals,
    })
}

fn signal_report(
    model: &CmdpModel<f64>,
    chain: &PolicyChain<f64>,
    g: Signal,
    c_total: f64,
    settings: &DiagnoseSettings,
    rng: &mut ChaCha8Rng,
) -> Result<SignalDiagnostics> {
    let n = model.n_states();
    let features = FeatureMap::one_hot(n, g);
    let probe = critic_of(chain, model, &features, 1.0, g);
    let lambda = probe.lambda_subspace.unwrap_or(1.0);
    let c_gamma = settings.c_gamma.unwrap_or_else(|| default_c_gamma(lambda));
    let truth = critic_of(chain, model, &features, c_gamma, g);

    let mut margin = f64::INFINITY;
    for _ in 0..settings.n_xi {
        let mut xi = vec![rng.gen_range(-1.0..=1.0)];
        let mut zeta = vec![0.0; features.dimension()];
        for b in &truth.complement_basis {
            axpy(rng.gen_range(-1.0..=1.0), b, &mut zeta);
        }
        xi.extend(zeta);
        let nn = dot(&xi, &xi);
        if nn > 0.0 {
            margin = margin.min(truth.a_matrix.quadratic_form(&xi) / nn - lambda / 2.0);
        }
    }

    // A(z)x through the per-transition estimator with zero signal, so the
    // b(z) part vanishes
    let kernel = truth.a_kernel_basis();
    let mut residual = 0.0f64;
    for &s in &chain.structure.recurrent {
        for a in 0..model.n_actions() {
            if chain.probs[(s, a)] == 0.0 {
                continue;
            }
            for (s_next, &p) in model.next_dist(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let z = Transition {
                    s,
                    a,
                    s_next,
                    r: 0.0,
                    c: 0.0,
                };
                for x in &kernel {
                    let ax = critic_sample(&features, c_gamma, &CriticState::from_joined(x), &z, g);
                    residual = residual.max(norm(&ax) / norm(x));
                }
            }
        }
    }

    let table: Vec<f64> = (0..n)
        .flat_map(|s| (0..model.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| model.signal(g, s, a))
        .collect();
    let span = table.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) - table.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let poisson = poisson_of(chain, model, g)?;
    let max_v = poisson.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_adv = poisson.adv.max_abs();
    Ok(SignalDiagnostics {
        signal: g,
        lambda_subspace: probe.lambda_subspace,
        c_gamma,
        subspace_pd_margin: margin,
        kernel_inclusion_residual: residual,
        kernel_dim: kernel.len(),
        signal_span: span,
        value_bound_slack: 2.0 * c_total * span - max_v,
        advantage_bound_slack: (1.0 + 4.0 * c_total) * span - max_adv,
    })
}
