//! The primal-dual natural actor-critic loop: per-epoch burn-in, MLMC critic
//! and natural-gradient inner loops for reward and cost, then a primal ascent
//! step on the policy and a projected descent step on the multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_unichain, CmdpModel, FeatureMap, Signal, SoftmaxPolicy, UnichainStructure};
use crate::oracle::{
    critic_gradient_of, critic_of, fisher_of, gain_of, hitting_of, solve_cmdp_lp, PolicyChain,
};
use crate::sampling::{
    critic_sample, expected_length, initial_state, mlmc_estimate, npg_sample, step_chain, top_level, CriticState,
    Phase, RngStream, StreamId, Transition,
};
use crate::scalar::{axpy, Scalar};

/// How the inner loops obtain their gradient estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// MLMC estimates from the simulated trajectory.
    #[default]
    Sampled,
    /// Exact stationary means replace the MLMC estimates. Trajectories are
    /// still drawn so sample accounting and the trace are unchanged.
    Exact,
}

/// Fully resolved algorithm parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub total_steps: usize,
    pub epochs: usize,
    pub inner_iters: usize,
    pub burn_in: usize,
    pub t_max: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_xi: f64,
    pub gamma_omega: f64,
    pub c_gamma: f64,
    pub eps_reg: f64,
    pub slater_delta: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: EstimatorMode,
    /// Initial logits; zeros (uniform policy) when absent.
    #[serde(default)]
    pub initial_theta: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub temperature: f64,
}

fn one() -> f64 {
    1.0
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.t_max.is_power_of_two() {
            return bad(format!("t_max = {} must be a power of two", self.t_max));
        }
        if !(self.slater_delta > 0.0 && self.slater_delta <= 1.0) {
            return bad(format!("slater_delta = {} must lie in (0, 1]", self.slater_delta));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_xi", self.gamma_xi),
            ("gamma_omega", self.gamma_omega),
            ("c_gamma", self.c_gamma),
            ("temperature", self.temperature),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and nonnegative"));
            }
        }
        if !(self.eps_reg.is_finite() && self.eps_reg >= 0.0) {
            return bad(format!("eps_reg = {} must be finite and nonnegative", self.eps_reg));
        }
        if self.temperature == 0.0 {
            return bad("temperature must be positive".into());
        }
        Ok(())
    }

    /// Upper end of the multiplier interval, `2/δ`.
    pub fn lambda_max(&self) -> f64 {
        2.0 / self.slater_delta
    }

    /// Expected samples per epoch: burn-in plus four MLMC inner loops.
    pub fn expected_epoch_samples(&self) -> f64 {
        self.burn_in as f64 + 4.0 * self.inner_iters as f64 * expected_length(self.t_max)
    }
}

/// Overrides and schedule constants; every unset field is derived from the
/// model and `total_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSettings {
    pub total_steps: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub inner_iters: Option<usize>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub t_max: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma_xi: Option<f64>,
    #[serde(default)]
    pub gamma_omega: Option<f64>,
    #[serde(default)]
    pub c_gamma: Option<f64>,
    #[serde(default = "default_eps_reg")]
    pub eps_reg: f64,
    #[serde(default)]
    pub slater_delta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: EstimatorMode,
    #[serde(default)]
    pub initial_theta: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub temperature: f64,
    /// `α = primal_scale/√T`
    #[serde(default = "one")]
    pub primal_scale: f64,
    /// `β = dual_scale/√T`
    #[serde(default = "one")]
    pub dual_scale: f64,
    /// `γ_ξ = critic_scale·ln T/(λ̂ H)` before the caps.
    #[serde(default = "one")]
    pub critic_scale: f64,
    /// When set, also `γ_ξ ≤ λ̂/(critic_cap_scale·c_γ²·C_tar²·ln T_max)`.
    #[serde(default)]
    pub critic_cap_scale: Option<f64>,
    /// `γ_ω = npg_scale·ln T/(μ̂ H)` before the stability cap.
    #[serde(default = "half")]
    pub npg_scale: f64,
}

fn default_eps_reg() -> f64 {
    1e-3
}

fn half() -> f64 {
    0.5
}

impl AlgoSettings {
    pub fn new(total_steps: usize) -> Self {
        Self {
            total_steps,
            epochs: None,
            inner_iters: None,
            burn_in: None,
            t_max: None,
            alpha: None,
            beta: None,
            gamma_xi: None,
            gamma_omega: None,
            c_gamma: None,
            eps_reg: default_eps_reg(),
            slater_delta: None,
            seed: 0,
            mode: EstimatorMode::Sampled,
            initial_theta: None,
            temperature: 1.0,
            primal_scale: 1.0,
            dual_scale: 1.0,
            critic_scale: 1.0,
            critic_cap_scale: None,
            npg_scale: 0.5,
        }
    }
}

/// `c_γ = λ + √(1/λ² − 1)` clamped to `[1, 10]`; 2 when `λ > 1`.
pub fn default_c_gamma(lambda: f64) -> f64 {
    if lambda.is_nan() || lambda <= 0.0 {
        return 10.0;
    }
    if lambda > 1.0 {
        return 2.0;
    }
    (lambda + (1.0 / (lambda * lambda) - 1.0).max(0.0).sqrt()).clamp(1.0, 10.0)
}

/// Critic step ceiling `γ‖A(z)‖ ≤ 1` with `‖A(z)‖ ≤ c_γ + 3`, plus the
/// variance condition `γ ≤ λ/(κ c_γ² C_tar² ln T_max)` when `κ` is given.
pub fn critic_step_cap(lambda: f64, c_gamma: f64, c_tar: f64, t_max: usize, kappa: Option<f64>) -> f64 {
    let norm = 1.0 / (c_gamma + 3.0);
    let variance = kappa.map_or(0.0, |k| k * c_gamma * c_gamma * c_tar * c_tar * (t_max.max(2) as f64).ln());
    if variance > 0.0 {
        (lambda / variance).min(norm)
    } else {
        norm
    }
}

/// Same for the natural-gradient recursion, `‖score ⊗ score‖ ≤ G₁²`.
pub fn npg_step_cap(score_bound: f64, eps_reg: f64) -> f64 {
    1.0 / (score_bound * score_bound + eps_reg) / 2.0
}

/// Schedule constants derived from exact quantities at the initial policy.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleEstimates {
    /// Smallest `λ_subspace` over the two critics.
    pub lambda_hat: f64,
    /// Smallest positive Fisher eigenvalue plus `ε_reg`.
    pub mu_hat: f64,
    pub c_hit: f64,
    pub c_tar: f64,
    pub slater_delta: f64,
}

pub fn schedule_estimates(
    model: &CmdpModel<f64>,
    policy: &SoftmaxPolicy<f64>,
    features_r: &FeatureMap<f64>,
    features_c: &FeatureMap<f64>,
    eps_reg: f64,
) -> Result<ScheduleEstimates> {
    let chain = PolicyChain::new(model, policy)?;
    let lam = |f: &FeatureMap<f64>| critic_of(&chain, model, f, 1.0, f.target()).lambda_subspace;
    let lambda_hat = match (lam(features_r), lam(features_c)) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 1.0,
    };
    let mu_hat = fisher_of(&chain, policy).min_positive_eigenvalue().unwrap_or(0.0) + eps_reg;
    let hc = hitting_of(&chain)?;
    let slater_delta = solve_cmdp_lp(model)?.slater_delta;
    Ok(ScheduleEstimates {
        lambda_hat,
        mu_hat,
        c_hit: hc.c_hit,
        c_tar: hc.c_tar,
        slater_delta,
    })
}

/// Fills every unset field of `settings`.
pub fn resolve_config(
    model: &CmdpModel<f64>,
    features_r: &FeatureMap<f64>,
    features_c: &FeatureMap<f64>,
    settings: &AlgoSettings,
) -> Result<AlgoConfig> {
    let t = settings.total_steps;
    let theta0 = settings
        .initial_theta
        .clone()
        .unwrap_or_else(|| vec![0.0; model.n_states() * model.n_actions()]);
    let policy = SoftmaxPolicy::for_model(model, theta0)?.with_temperature(settings.temperature)?;
    let est = schedule_estimates(model, &policy, features_r, features_c, settings.eps_reg)?;

    let log2_t = (t.max(2) as f64).log2();
    let ln_t = (t.max(2) as f64).ln();
    let inner_iters = settings.inner_iters.unwrap_or(log2_t.ceil() as usize).max(1);
    let t_max = settings
        .t_max
        .unwrap_or_else(|| if t >= 1 { 1 << top_level(t) } else { 1 });
    let burn_in = settings.burn_in.unwrap_or_else(|| {
        if est.c_hit > 0.0 {
            ((4.0 * est.c_hit + 1.0) * log2_t).ceil() as usize
        } else {
            0
        }
    });
    let per_epoch = burn_in + 4 * inner_iters * (top_level(t_max) as usize + 1);
    let epochs = settings.epochs.unwrap_or(t / per_epoch);
    let sqrt_t = (t.max(1) as f64).sqrt();
    let c_gamma = settings.c_gamma.unwrap_or_else(|| default_c_gamma(est.lambda_hat));
    let gamma_xi = settings.gamma_xi.unwrap_or_else(|| {
        let cap = critic_step_cap(est.lambda_hat, c_gamma, est.c_tar, t_max, settings.critic_cap_scale);
        (settings.critic_scale * ln_t / (est.lambda_hat * inner_iters as f64)).min(cap)
    });
    let gamma_omega = settings.gamma_omega.unwrap_or_else(|| {
        (settings.npg_scale * ln_t / (est.mu_hat * inner_iters as f64))
            .min(npg_step_cap(policy.score_bound().as_f64(), settings.eps_reg))
    });
    let cfg = AlgoConfig {
        total_steps: t,
        epochs,
        inner_iters,
        burn_in,
        t_max,
        alpha: settings.alpha.unwrap_or(settings.primal_scale / sqrt_t),
        beta: settings.beta.unwrap_or(settings.dual_scale / sqrt_t),
        gamma_xi,
        gamma_omega,
        c_gamma,
        eps_reg: settings.eps_reg,
        slater_delta: settings.slater_delta.unwrap_or(est.slater_delta).clamp(f64::MIN_POSITIVE, 1.0),
        seed: settings.seed,
        mode: settings.mode,
        initial_theta: settings.initial_theta.clone(),
        temperature: settings.temperature,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Multiplier projected onto `[0, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVariable<T> {
    lambda: T,
    upper: T,
}

impl<T: Scalar> DualVariable<T> {
    pub fn new(upper: T) -> Self {
        Self {
            lambda: T::zero(),
            upper,
        }
    }

    pub fn value(&self) -> T {
        self.lambda
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    /// `λ ← clamp(λ − β η_c, 0, upper)`
    pub fn step(&mut self, beta: T, eta_c: T) {
        self.lambda = (self.lambda - beta * eta_c).max(T::zero()).min(self.upper);
    }
}

/// Outcome of one burn-in segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BurnIn {
    pub state: usize,
    pub hit: bool,
    /// First step index (0 = the starting state) at which the chain was in
    /// the recurrent class.
    pub hitting_step: Option<usize>,
}

/// Advances `steps` transitions from `s0`, appending them to `trace`.
/// `structure` is only used to report whether the recurrent class was hit.
pub fn burn_in<T: Scalar, R: rand::Rng + ?Sized>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    structure: &UnichainStructure,
    s0: usize,
    steps: usize,
    rng: &mut R,
    trace: &mut Vec<Transition<T>>,
) -> BurnIn {
    let mut s = s0;
    let mut hitting_step = structure.is_recurrent(s).then_some(0);
    for b in 0..steps {
        let z = step_chain(model, policy, s, rng);
        trace.push(z);
        s = z.s_next;
        if hitting_step.is_none() && structure.is_recurrent(s) {
            hitting_step = Some(b + 1);
        }
    }
    BurnIn {
        state: s,
        hit: hitting_step.is_some(),
        hitting_step,
    }
}

/// Shared inputs of the inner loops within one epoch.
pub struct EpochContext<'a, T> {
    pub model: &'a CmdpModel<T>,
    pub policy: &'a SoftmaxPolicy<T>,
    pub config: &'a AlgoConfig,
    pub epoch: u64,
    /// Only built in exact mode.
    pub chain: Option<&'a PolicyChain<T>>,
}

impl<'a, T: Scalar> EpochContext<'a, T> {
    fn stream(&self, phase: Phase, h: usize) -> RngStream {
        RngStream::new(self.config.seed, StreamId::new(self.epoch, phase, h as u64))
    }

    fn exact_chain(&self) -> Result<&'a PolicyChain<T>> {
        self.chain
            .ok_or_else(|| Error::Config("exact estimator mode needs the policy chain".into()))
    }
}

/// `H` critic iterations from `ξ = 0`. The chain continues from `*state`.
pub fn run_critic_phase<T: Scalar>(
    ctx: &EpochContext<'_, T>,
    features: &FeatureMap<T>,
    g: Signal,
    state: &mut usize,
    trace: &mut Vec<Transition<T>>,
) -> Result<CriticState<T>> {
    let cfg = ctx.config;
    let c_gamma = T::of(cfg.c_gamma);
    let step = T::of(cfg.gamma_xi);
    let exact = match cfg.mode {
        EstimatorMode::Exact => Some(critic_of(ctx.exact_chain()?, ctx.model, features, c_gamma, g)),
        EstimatorMode::Sampled => None,
    };
    let mut xi = CriticState::zeros(features.dimension());
    for h in 0..cfg.inner_iters {
        let mut rng = ctx.stream(Phase::Critic(g), h);
        let (est, draw) = mlmc_estimate(ctx.model, ctx.policy, state, &mut rng, cfg.t_max, |z| {
            critic_sample(features, c_gamma, &xi, z, g)
        });
        trace.extend(draw.trajectory);
        let grad = match &exact {
            Some(truth) => truth.mean_gradient(&xi.joined()),
            None => est,
        };
        let mut joined = xi.joined();
        axpy(-step, &grad, &mut joined);
        xi = CriticState::from_joined(&joined);
    }
    Ok(xi)
}

/// `H` natural-gradient iterations from `ω = 0` on the regularized
/// objective `½ωᵀ(F + εI)ω − ωᵀ∇J`.
pub fn run_npg_phase<T: Scalar>(
    ctx: &EpochContext<'_, T>,
    features: &FeatureMap<T>,
    xi: &CriticState<T>,
    g: Signal,
    state: &mut usize,
    trace: &mut Vec<Transition<T>>,
) -> Result<Vec<T>> {
    let cfg = ctx.config;
    let step = T::of(cfg.gamma_omega);
    let eps = T::of(cfg.eps_reg);
    let exact = match cfg.mode {
        EstimatorMode::Exact => {
            let chain = ctx.exact_chain()?;
            let fisher = fisher_of(chain, ctx.policy);
            let grad = critic_gradient_of(chain, ctx.model, ctx.policy, features, xi.eta, &xi.zeta, g);
            Some((fisher, grad))
        }
        EstimatorMode::Sampled => None,
    };
    let mut omega = vec![T::zero(); ctx.policy.dim()];
    for h in 0..cfg.inner_iters {
        let mut rng = ctx.stream(Phase::Npg(g), h);
        let (est, draw) = mlmc_estimate(ctx.model, ctx.policy, state, &mut rng, cfg.t_max, |z| {
            npg_sample(ctx.policy, features, xi, &omega, z, g)
        });
        trace.extend(draw.trajectory);
        let mut grad = match &exact {
            Some((fisher, pg)) => {
                let mut v = fisher.matrix.mul_vec(&omega);
                axpy(-T::one(), pg, &mut v);
                v
            }
            None => est,
        };
        axpy(eps, &omega, &mut grad);
        axpy(-step, &grad, &mut omega);
    }
    Ok(omega)
}

/// `θ' = θ + α(ω_r + λω_c)`, `λ' = clamp(λ − βη_c, 0, 2/δ)`.
#[allow(clippy::too_many_arguments)]
pub fn primal_dual_step<T: Scalar>(
    theta: &[T],
    dual: &mut DualVariable<T>,
    omega_r: &[T],
    omega_c: &[T],
    eta_c: T,
    alpha: T,
    beta: T,
    epoch: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let check = |what: &str, v: &[T]| {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteUpdate {
                epoch,
                what: what.to_string(),
            })
        }
    };
    check("omega_r", omega_r)?;
    check("omega_c", omega_c)?;
    check("eta_c", &[eta_c])?;
    let lambda = dual.value();
    let mut combined = omega_r.to_vec();
    axpy(lambda, omega_c, &mut combined);
    let mut next = theta.to_vec();
    axpy(alpha, &combined, &mut next);
    check("theta", &next)?;
    dual.step(beta, eta_c);
    Ok((next, combined))
}

/// Everything recorded about one epoch. `theta`, `lambda`, `j_r`, `j_c` are
/// taken at the start of the epoch, before the update.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct EpochRecord<T> {
    pub k: usize,
    pub theta: Vec<T>,
    pub lambda: T,
    pub eta_r: T,
    pub eta_c: T,
    pub xi_r: Vec<T>,
    pub xi_c: Vec<T>,
    pub omega_r: Vec<T>,
    pub omega_c: Vec<T>,
    pub omega_combined: Vec<T>,
    pub burn_in_hit: bool,
    pub hitting_step: Option<usize>,
    pub samples_used: usize,
    /// Exact gains of the epoch's policy (diagnostics only).
    pub j_r: T,
    pub j_c: T,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct RunOutput<T> {
    pub trace: Vec<Transition<T>>,
    pub epochs: Vec<EpochRecord<T>>,
    pub final_theta: Vec<T>,
    pub final_lambda: T,
    pub final_j_r: T,
    pub final_j_c: T,
    /// Epochs `k ≥ 1` at which `J_r + λJ_c` fell below its previous value.
    pub lagrangian_decreases: Vec<usize>,
}

/// Runs `config.epochs` epochs on one continuing chain.
pub fn run<T: Scalar>(
    model: &CmdpModel<T>,
    features_r: &FeatureMap<T>,
    features_c: &FeatureMap<T>,
    config: &AlgoConfig,
) -> Result<RunOutput<T>> {
    config.validate()?;
    features_r.check_model(model)?;
    features_c.check_model(model)?;
    let structure = validate_unichain(model)?;
    let theta0: Vec<T> = match &config.initial_theta {
        Some(t) => t.iter().map(|&x| T::of(x)).collect(),
        None => vec![T::zero(); model.n_states() * model.n_actions()],
    };
    let mut policy = SoftmaxPolicy::for_model(model, theta0)?.with_temperature(T::of(config.temperature))?;
    let mut dual = DualVariable::new(T::of(config.lambda_max()));
    let (alpha, beta) = (T::of(config.alpha), T::of(config.beta));

    let mut trace = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut lagrangian_decreases = Vec::new();
    let mut prev_lagrangian: Option<T> = None;
    let mut state = initial_state(model, &mut RngStream::new(config.seed, StreamId::new(0, Phase::Aux, 0)));

    for k in 0..config.epochs {
        let chain = PolicyChain::with_structure(model, &policy, structure.clone())?;
        let j_r = gain_of(&chain, model, Signal::Reward);
        let j_c = gain_of(&chain, model, Signal::Cost);
        let lagrangian = j_r + dual.value() * j_c;
        if prev_lagrangian.is_some_and(|p| lagrangian < p - T::prob_tol()) {
            lagrangian_decreases.push(k);
        }
        prev_lagrangian = Some(lagrangian);

        let start = trace.len();
        let mut rng = RngStream::new(config.seed, StreamId::new(k as u64, Phase::BurnIn, 0));
        let b = burn_in(model, &policy, &structure, state, config.burn_in, &mut rng, &mut trace);
        state = b.state;

        let ctx = EpochContext {
            model,
            policy: &policy,
            config,
            epoch: k as u64,
            chain: Some(&chain),
        };
        let xi_r = run_critic_phase(&ctx, features_r, Signal::Reward, &mut state, &mut trace)?;
        let xi_c = run_critic_phase(&ctx, features_c, Signal::Cost, &mut state, &mut trace)?;
        let omega_r = run_npg_phase(&ctx, features_r, &xi_r, Signal::Reward, &mut state, &mut trace)?;
        let omega_c = run_npg_phase(&ctx, features_c, &xi_c, Signal::Cost, &mut state, &mut trace)?;

        let lambda = dual.value();
        let (next, combined) = primal_dual_step(policy.theta(), &mut dual, &omega_r, &omega_c, xi_c.eta, alpha, beta, k)?;
        let theta = std::mem::replace(&mut policy, SoftmaxPolicy::for_model(model, next)?.with_temperature(T::of(config.temperature))?)
            .into_theta();
        epochs.push(EpochRecord {
            k,
            theta,
            lambda,
            eta_r: xi_r.eta,
            eta_c: xi_c.eta,
            xi_r: xi_r.joined(),
            xi_c: xi_c.joined(),
            omega_r,
            omega_c,
            omega_combined: combined,
            burn_in_hit: b.hit,
            hitting_step: b.hitting_step,
            samples_used: trace.len() - start,
            j_r,
            j_c,
        });
    }
    let chain = PolicyChain::with_structure(model, &policy, structure)?;
    Ok(RunOutput {
        final_j_r: gain_of(&chain, model, Signal::Reward),
        final_j_c: gain_of(&chain, model, Signal::Cost),
        trace,
        epochs,
        final_theta: policy.into_theta(),
        final_lambda: dual.value(),
        lagrangian_decreases,
    })
}
