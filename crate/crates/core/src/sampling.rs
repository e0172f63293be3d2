//! Trajectory simulation and the per-transition critic and natural-gradient
//! estimators, combined across geometric levels by a multi-level Monte Carlo
//! estimator.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{CmdpModel, FeatureMap, Signal, SoftmaxPolicy};
use crate::scalar::{dot, Scalar};

/// Which part of an epoch a random stream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    BurnIn,
    Critic(Signal),
    Npg(Signal),
    /// Anything outside the algorithm proper (tests, measurements).
    Aux,
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::BurnIn => 0,
            Phase::Critic(Signal::Reward) => 1,
            Phase::Critic(Signal::Cost) => 2,
            Phase::Npg(Signal::Reward) => 3,
            Phase::Npg(Signal::Cost) => 4,
            Phase::Aux => 15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub epoch: u64,
    pub phase: Phase,
    pub inner: u64,
}

impl StreamId {
    pub fn new(epoch: u64, phase: Phase, inner: u64) -> Self {
        Self { epoch, phase, inner }
    }

    /// 32 bits of epoch, 4 of phase, 28 of inner step.
    fn packed(&self) -> u64 {
        assert!(self.epoch < 1 << 32, "epoch index {} out of stream range", self.epoch);
        assert!(self.inner < 1 << 28, "inner index {} out of stream range", self.inner);
        (self.epoch << 32) | (self.phase.code() << 28) | self.inner
    }
}

/// A ChaCha stream keyed by the run seed and selected by `StreamId`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.packed());
        Self { seed, id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// One step `z = (s, a, s')` with the collected reward and cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transition<T> {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: T,
    pub c: T,
}

impl<T: Scalar> Transition<T> {
    pub fn signal(&self, g: Signal) -> T {
        match g {
            Signal::Reward => self.r,
            Signal::Cost => self.c,
        }
    }
}

/// Inverse-CDF draw; the last index absorbs round-off.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    // zero-probability tail entries must never be returned
    probs.iter().rposition(|p| *p > T::zero()).unwrap_or(probs.len() - 1)
}

pub fn step_chain<T: Scalar, R: Rng + ?Sized>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    s: usize,
    rng: &mut R,
) -> Transition<T> {
    let a = sample_index(&policy.action_distribution(s), rng);
    let s_next = sample_index(model.next_dist(s, a), rng);
    Transition {
        s,
        a,
        s_next,
        r: model.reward(s, a),
        c: model.cost(s, a),
    }
}

/// Draws the initial state from `ρ`.
pub fn initial_state<T: Scalar, R: Rng + ?Sized>(model: &CmdpModel<T>, rng: &mut R) -> usize {
    sample_index(model.initial_dist(), rng)
}

/// Linear critic iterate `ξ = (η, ζ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CriticState<T> {
    pub eta: T,
    pub zeta: Vec<T>,
}

impl<T: Scalar> CriticState<T> {
    pub fn zeros(m: usize) -> Self {
        Self {
            eta: T::zero(),
            zeta: vec![T::zero(); m],
        }
    }

    pub fn from_joined(xi: &[T]) -> Self {
        Self {
            eta: xi[0],
            zeta: xi[1..].to_vec(),
        }
    }

    pub fn joined(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(1 + self.zeta.len());
        v.push(self.eta);
        v.extend_from_slice(&self.zeta);
        v
    }

    /// `ζᵀφ(s)`
    pub fn value(&self, features: &FeatureMap<T>, s: usize) -> T {
        dot(&self.zeta, features.phi(s))
    }
}

/// `A(z) ξ − b(z)` with `A(z) = [[c_γ, 0], [φ(s), φ(s)(φ(s) − φ(s'))ᵀ]]`
/// and `b(z) = (c_γ g, g φ(s))`.
pub fn critic_sample<T: Scalar>(
    features: &FeatureMap<T>,
    c_gamma: T,
    xi: &CriticState<T>,
    z: &Transition<T>,
    g: Signal,
) -> Vec<T> {
    let gz = z.signal(g);
    let phi = features.phi(z.s);
    // ζ-block is φ(s) times a scalar TD-like residual
    let td = xi.eta + xi.value(features, z.s) - xi.value(features, z.s_next) - gz;
    let mut out = Vec::with_capacity(1 + phi.len());
    out.push(c_gamma * (xi.eta - gz));
    out.extend(phi.iter().map(|&p| p * td));
    out
}

/// `score·(scoreᵀω) − Â·score` with `Â = g − η + ζᵀ(φ(s') − φ(s))`.
pub fn npg_sample<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    features: &FeatureMap<T>,
    xi: &CriticState<T>,
    omega: &[T],
    z: &Transition<T>,
    g: Signal,
) -> Vec<T> {
    let adv = z.signal(g) - xi.eta + xi.value(features, z.s_next) - xi.value(features, z.s);
    let na = policy.n_actions();
    let block = policy.score_block(z.s, z.a);
    let range = z.s * na..(z.s + 1) * na;
    let coef = dot(&block, &omega[range.clone()]) - adv;
    let mut out = vec![T::zero(); policy.dim()];
    for (o, b) in out[range].iter_mut().zip(&block) {
        *o = *b * coef;
    }
    out
}

/// Level draw with `Pr[Q = j] = 2^{-j}`, `j ≥ 1`.
pub fn draw_level<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    let mut q = 1;
    // capped far above any admissible budget
    while q < 62 && rng.gen::<bool>() {
        q += 1;
    }
    q
}

/// `2^Q` when that fits the budget, else a single sample.
pub fn trajectory_length(level_q: u32, t_max: usize) -> usize {
    match 1usize.checked_shl(level_q) {
        Some(len) if len <= t_max => len,
        _ => 1,
    }
}

/// `2^Q > t_max`
pub fn is_truncated(level_q: u32, t_max: usize) -> bool {
    1usize.checked_shl(level_q).is_none_or(|len| len > t_max)
}

/// `⌊log₂ t_max⌋`
pub fn top_level(t_max: usize) -> u32 {
    assert!(t_max >= 1, "t_max must be at least 1");
    usize::BITS - 1 - t_max.leading_zeros()
}

/// `E[l] = J + 2^{-J}` with `J = ⌊log₂ t_max⌋`.
pub fn expected_length(t_max: usize) -> f64 {
    let j = top_level(t_max);
    f64::from(j) + 0.5f64.powi(j as i32)
}

/// Prefix averages entering the telescoped estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct LevelAverages<T> {
    /// The first sample alone.
    pub g0: Vec<T>,
    /// Means of the first `2^{Q-1}` and `2^Q` samples; absent when truncated.
    pub lower: Option<Vec<T>>,
    pub upper: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct MlmcDraw<T> {
    pub level_q: u32,
    pub truncated: bool,
    pub trajectory: Vec<Transition<T>>,
    pub level_averages: LevelAverages<T>,
}

impl<T> MlmcDraw<T> {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}

/// Combines per-sample terms `terms[0..l]` drawn along one trajectory at
/// level `q`. Returns the estimate and the level averages.
pub fn mlmc_combine<T: Scalar>(terms: &[Vec<T>], level_q: u32, t_max: usize) -> (Vec<T>, LevelAverages<T>) {
    let len = trajectory_length(level_q, t_max);
    assert_eq!(terms.len(), len, "trajectory length does not match level");
    let g0 = terms[0].clone();
    if len == 1 {
        return (
            g0.clone(),
            LevelAverages {
                g0,
                lower: None,
                upper: None,
            },
        );
    }
    let half = len / 2;
    let dim = g0.len();
    let mut lower = vec![T::zero(); dim];
    for t in &terms[..half] {
        crate::scalar::axpy(T::one(), t, &mut lower);
    }
    let mut upper = lower.clone();
    for t in &terms[half..] {
        crate::scalar::axpy(T::one(), t, &mut upper);
    }
    let inv_lo = T::one() / T::of_usize(half);
    let inv_hi = T::one() / T::of_usize(len);
    lower.iter_mut().for_each(|x| *x *= inv_lo);
    upper.iter_mut().for_each(|x| *x *= inv_hi);
    let weight = T::of_usize(len);
    let est = (0..dim).map(|i| g0[i] + weight * (upper[i] - lower[i])).collect();
    (
        est,
        LevelAverages {
            g0,
            lower: Some(lower),
            upper: Some(upper),
        },
    )
}

/// Draws a level, advances the chain `l` steps from `*state` (leaving it at
/// the last successor), and combines `term(z)` over the trajectory.
pub fn mlmc_estimate<T: Scalar, R: Rng + ?Sized>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    state: &mut usize,
    rng: &mut R,
    t_max: usize,
    mut term: impl FnMut(&Transition<T>) -> Vec<T>,
) -> (Vec<T>, MlmcDraw<T>) {
    let level_q = draw_level(rng);
    let len = trajectory_length(level_q, t_max);
    let mut trajectory = Vec::with_capacity(len);
    let mut terms = Vec::with_capacity(len);
    for _ in 0..len {
        let z = step_chain(model, policy, *state, rng);
        *state = z.s_next;
        terms.push(term(&z));
        trajectory.push(z);
    }
    let (est, level_averages) = mlmc_combine(&terms, level_q, t_max);
    (
        est,
        MlmcDraw {
            level_q,
            truncated: is_truncated(level_q, t_max),
            trajectory,
            level_averages,
        },
    )
}

/// Exact `E_Q[estimate]` for a fixed trajectory, enumerating every level.
/// `terms` must hold at least `2^{⌊log₂ t_max⌋}` samples.
pub fn mlmc_expectation<T: Scalar>(terms: &[Vec<T>], t_max: usize) -> Vec<T> {
    let top = top_level(t_max);
    let dim = terms[0].len();
    let mut out = vec![T::zero(); dim];
    let mut tail = T::one();
    for q in 1..=top {
        let w = T::of(0.5f64.powi(q as i32));
        let len = trajectory_length(q, t_max);
        let (est, _) = mlmc_combine(&terms[..len], q, t_max);
        crate::scalar::axpy(w, &est, &mut out);
        tail -= w;
    }
    // every Q > top truncates to the first sample
    crate::scalar::axpy(tail, &terms[0], &mut out);
    out
}

/// Monte Carlo moments of an estimator around a known truth.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorMoments {
    pub n_trials: usize,
    /// `‖mean − truth‖²`
    pub bias_sq: f64,
    /// Mean of `‖estimate − truth‖²`.
    pub mse: f64,
    /// Sample variance of the squared error, for standard errors.
    pub mse_var: f64,
    pub mean_length: f64,
    pub mean: Vec<f64>,
}

impl EstimatorMoments {
    fn from_samples(samples: &[Vec<f64>], lengths: &[usize], truth: &[f64]) -> Self {
        let n = samples.len();
        let dim = truth.len();
        let mut mean = vec![0.0; dim];
        for x in samples {
            crate::scalar::axpy(1.0 / n as f64, x, &mut mean);
        }
        let errs: Vec<f64> = samples.iter().map(|x| crate::scalar::dist_sq(x, truth)).collect();
        let mse = errs.iter().sum::<f64>() / n as f64;
        let mse_var = if n > 1 {
            errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            n_trials: n,
            bias_sq: crate::scalar::dist_sq(&mean, truth),
            mse,
            mse_var,
            mean_length: lengths.iter().sum::<usize>() as f64 / n as f64,
            mean,
        }
    }
}

/// Where each independent trial starts its chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Fresh draw from the model's initial distribution.
    Initial,
    /// Fixed state.
    State(usize),
}

fn start<T: Scalar, R: Rng + ?Sized>(model: &CmdpModel<T>, rule: StartRule, rng: &mut R) -> usize {
    match rule {
        StartRule::Initial => initial_state(model, rng),
        StartRule::State(s) => s,
    }
}

/// Bias and second moment of the MLMC estimator of `E[functional(z)]`
/// over `n_trials` independent chains.
#[allow(clippy::too_many_arguments)]
pub fn measure_mlmc_moments<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    functional: impl Fn(&Transition<T>) -> Vec<T>,
    truth: &[T],
    t_max: usize,
    n_trials: usize,
    rule: StartRule,
    seed: u64,
) -> EstimatorMoments {
    let mut samples = Vec::with_capacity(n_trials);
    let mut lengths = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let mut rng = RngStream::new(seed, StreamId::new(0, Phase::Aux, i as u64));
        let mut s = start(model, rule, &mut rng);
        let (est, draw) = mlmc_estimate(model, policy, &mut s, &mut rng, t_max, &functional);
        samples.push(est.iter().map(|x| x.as_f64()).collect());
        lengths.push(draw.len());
    }
    let truth: Vec<f64> = truth.iter().map(|x| x.as_f64()).collect();
    EstimatorMoments::from_samples(&samples, &lengths, &truth)
}

/// Moments of the plain `n_samples`-step average of `functional` along one
/// chain, over `n_trials` independent chains.
#[allow(clippy::too_many_arguments)]
pub fn measure_average_moments<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    functional: impl Fn(&Transition<T>) -> Vec<T>,
    truth: &[T],
    n_samples: usize,
    n_trials: usize,
    rule: StartRule,
    seed: u64,
) -> EstimatorMoments {
    let dim = truth.len();
    let mut samples = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let mut rng = RngStream::new(seed, StreamId::new(0, Phase::Aux, i as u64));
        let mut s = start(model, rule, &mut rng);
        let mut acc = vec![0.0; dim];
        for _ in 0..n_samples {
            let z = step_chain(model, policy, s, &mut rng);
            s = z.s_next;
            for (a, v) in acc.iter_mut().zip(functional(&z)) {
                *a += v.as_f64();
            }
        }
        acc.iter_mut().for_each(|a| *a /= n_samples as f64);
        samples.push(acc);
    }
    let truth: Vec<f64> = truth.iter().map(|x| x.as_f64()).collect();
    EstimatorMoments::from_samples(&samples, &vec![n_samples; n_trials], &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::EnvSpec;
    use approx::assert_abs_diff_eq;

    fn terms(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn two_ring_steps_deterministically() {
        let m: CmdpModel<f64> = EnvSpec::TwoRing.build().unwrap();
        let pi = SoftmaxPolicy::uniform(2, 1);
        let mut rng = RngStream::new(1, StreamId::new(0, Phase::Aux, 0));
        for _ in 0..50 {
            assert_eq!(step_chain(&m, &pi, 0, &mut rng).s_next, 1);
        }
        let m: CmdpModel<f64> = EnvSpec::TransientFunnel { p: 1.0 }.build().unwrap();
        let pi = SoftmaxPolicy::uniform(2, 2);
        for _ in 0..50 {
            assert_eq!(step_chain(&m, &pi, 0, &mut rng).s_next, 1);
        }
    }

    #[test]
    fn length_formula() {
        assert_eq!(trajectory_length(1, 8), 2);
        assert_eq!(trajectory_length(3, 8), 8);
        assert_eq!(trajectory_length(4, 8), 1);
        assert_eq!(trajectory_length(1, 1), 1);
        assert_eq!(trajectory_length(62, usize::MAX), 1 << 62);
        assert_eq!(top_level(8), 3);
        assert_eq!(top_level(9), 3);
        assert_abs_diff_eq!(expected_length(8), 3.125);
    }

    #[test]
    fn telescoped_expectation_of_one_two_three_four() {
        // Q=1: 1 + 2(1.5 − 1) = 2; Q=2: 1 + 4(2.5 − 1.5) = 5; Q≥3: 1
        let t = terms(&[1.0, 2.0, 3.0, 4.0]);
        let (e1, _) = mlmc_combine(&t[..2], 1, 4);
        let (e2, _) = mlmc_combine(&t, 2, 4);
        let (e3, _) = mlmc_combine(&t[..1], 3, 4);
        assert_eq!((e1[0], e2[0], e3[0]), (2.0, 5.0, 1.0));
        assert_abs_diff_eq!(mlmc_expectation(&t, 4)[0], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn budget_of_one_returns_first_sample() {
        let m: CmdpModel<f64> = EnvSpec::ConstrainedSelfLoop.build().unwrap();
        let pi = SoftmaxPolicy::uniform(1, 2);
        let mut rng = RngStream::new(3, StreamId::new(0, Phase::Aux, 0));
        for _ in 0..200 {
            let mut s = 0;
            let (est, draw) = mlmc_estimate(&m, &pi, &mut s, &mut rng, 1, |z| vec![z.r]);
            assert_eq!(draw.len(), 1);
            assert_eq!(est[0], draw.trajectory[0].r);
        }
    }

    #[test]
    fn critic_sample_zero_iterate_is_minus_b() {
        let f = FeatureMap::<f64>::one_hot(2, Signal::Reward);
        let z = Transition {
            s: 1,
            a: 0,
            s_next: 0,
            r: 1.0,
            c: -0.25,
        };
        let out = critic_sample(&f, 2.0, &CriticState::zeros(2), &z, Signal::Reward);
        assert_eq!(out, vec![-2.0, 0.0, -1.0]);
        // hand expansion at ξ = (0.3, 0.5, −0.2): td = 0.3 + (−0.2) − 0.5 − 1
        let xi = CriticState {
            eta: 0.3,
            zeta: vec![0.5, -0.2],
        };
        let out = critic_sample(&f, 2.0, &xi, &z, Signal::Reward);
        assert_abs_diff_eq!(out[0], 2.0 * (0.3 - 1.0), epsilon = 1e-15);
        assert_eq!(out[1], 0.0);
        assert_abs_diff_eq!(out[2], -1.4, epsilon = 1e-15);
    }

    #[test]
    fn npg_sample_hand_values() {
        let f = FeatureMap::<f64>::one_hot(1, Signal::Reward);
        let pi = SoftmaxPolicy::uniform(1, 2);
        let z = Transition {
            s: 0,
            a: 0,
            s_next: 0,
            r: 1.0,
            c: -1.0,
        };
        let out = npg_sample(&pi, &f, &CriticState::zeros(1), &[0.0, 0.0], &z, Signal::Reward);
        assert_eq!(out, vec![-0.5, 0.5]);
        let xi = CriticState {
            eta: 1.0,
            zeta: vec![0.7],
        };
        let out = npg_sample(&pi, &f, &xi, &[0.0, 0.0], &z, Signal::Reward);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let id = StreamId::new(4, Phase::Critic(Signal::Cost), 9);
        let a: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(5, id);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(5, id);
            move |_| r.next_u64()
        }).collect();
        let c: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(5, StreamId::new(4, Phase::Npg(Signal::Cost), 9));
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn constant_functional_has_no_error() {
        let m: CmdpModel<f64> = EnvSpec::FunnelRing { p: 0.5, k: 3 }.build().unwrap();
        let pi = SoftmaxPolicy::uniform(4, 2);
        let mo = measure_mlmc_moments(&m, &pi, |_| vec![0.7], &[0.7], 64, 500, StartRule::Initial, 2);
        assert!(mo.bias_sq < 1e-28 && mo.mse < 1e-28);
    }

    #[test]
    fn sample_index_skips_zero_mass() {
        let mut rng = RngStream::new(0, StreamId::new(0, Phase::Aux, 0));
        for _ in 0..1000 {
            assert_eq!(sample_index(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
