//! Exact Markov-chain quantities under a fixed policy: stationary
//! distribution, gains, Poisson-equation solutions, hitting constants and
//! Cesàro total-variation distances.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve, Lu, Matrix};
use crate::model::{induced_kernel, validate_unichain, CmdpModel, Signal, SoftmaxPolicy, UnichainStructure};
use crate::scalar::Scalar;

/// `d^π`, zero on transient states.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct StationarySolution<T> {
    pub dist: Vec<T>,
    pub recurrent_support: Vec<usize>,
}

/// Solves `dᵀ(P − I) = 0`, `Σd = 1` on the recurrent class. Only
/// uniqueness is used, so periodic classes are handled exactly.
pub fn stationary_distribution<T: Scalar>(
    kernel: &Matrix<T>,
    structure: &UnichainStructure,
) -> Result<StationarySolution<T>> {
    let rec = &structure.recurrent;
    let r = rec.len();
    if r == 0 {
        return Err(Error::SingularSystem("empty recurrent class".into()));
    }
    // leaking mass means the class is not closed under this kernel
    for &i in rec {
        let leak: T = structure.transient.iter().map(|&j| kernel[(i, j)]).sum();
        if leak > T::zero() {
            return Err(Error::SingularSystem(format!(
                "recurrent state {i} leaks mass {leak} to transient states"
            )));
        }
    }
    let mut sys = Matrix::from_fn(r, r, |j, i| {
        let delta = if i == j { T::one() } else { T::zero() };
        kernel[(rec[i], rec[j])] - delta
    });
    let mut rhs = vec![T::zero(); r];
    for i in 0..r {
        sys[(r - 1, i)] = T::one();
    }
    rhs[r - 1] = T::one();
    let sol = solve(&sys, &rhs)?;
    let mut dist = vec![T::zero(); kernel.rows()];
    for (k, &s) in rec.iter().enumerate() {
        // clamp round-off negatives
        dist[s] = sol[k].max(T::zero());
    }
    let total: T = dist.iter().copied().sum();
    for d in &mut dist {
        *d /= total;
    }
    Ok(StationarySolution {
        dist,
        recurrent_support: rec.clone(),
    })
}

/// Everything about the chain induced by one policy that the other
/// oracles need.
#[derive(Clone, Debug)]
pub struct PolicyChain<T> {
    pub kernel: Matrix<T>,
    pub structure: UnichainStructure,
    pub stationary: StationarySolution<T>,
    /// `π(a|s)`, rows indexed by state.
    pub probs: Matrix<T>,
}

impl<T: Scalar> PolicyChain<T> {
    pub fn new(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>) -> Result<Self> {
        let structure = validate_unichain(model)?;
        Self::with_structure(model, policy, structure)
    }

    pub fn with_structure(
        model: &CmdpModel<T>,
        policy: &SoftmaxPolicy<T>,
        structure: UnichainStructure,
    ) -> Result<Self> {
        let kernel = induced_kernel(model, policy)?;
        let stationary = stationary_distribution(&kernel, &structure)?;
        Ok(Self {
            kernel,
            structure,
            stationary,
            probs: policy.probabilities(),
        })
    }

    pub fn d(&self) -> &[T] {
        &self.stationary.dist
    }

    /// Occupancy `ν(s,a) = d(s) π(a|s)`.
    pub fn occupancy(&self, s: usize, a: usize) -> T {
        self.stationary.dist[s] * self.probs[(s, a)]
    }

    /// `g^π(s) = Σ_a π(a|s) g(s,a)`
    pub fn policy_signal(&self, model: &CmdpModel<T>, g: Signal) -> Vec<T> {
        (0..model.n_states())
            .map(|s| {
                (0..model.n_actions())
                    .map(|a| self.probs[(s, a)] * model.signal(g, s, a))
                    .sum()
            })
            .collect()
    }
}

/// `J_g = Σ_s d(s) Σ_a π(a|s) g(s,a)`.
pub fn average_objective<T: Scalar>(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>, g: Signal) -> Result<T> {
    let chain = PolicyChain::new(model, policy)?;
    Ok(gain_of(&chain, model, g))
}

pub(crate) fn gain_of<T: Scalar>(chain: &PolicyChain<T>, model: &CmdpModel<T>, g: Signal) -> T {
    crate::scalar::dot(chain.d(), &chain.policy_signal(model, g))
}

/// Gain, normalised bias `V` (`dᵀV = 0`), action values and advantages.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct PoissonSolution<T> {
    pub gain: T,
    pub v: Vec<T>,
    /// `Q(s,a)`, `n_states × n_actions`.
    #[serde(skip)]
    pub q: Matrix<T>,
    #[serde(skip)]
    pub adv: Matrix<T>,
}

impl<T: Scalar> PoissonSolution<T> {
    /// `max_{s,a} |Q(s,a) − g(s,a) + J − Σ_{s'} P(s'|s,a) V(s')|`
    pub fn bellman_residual(&self, model: &CmdpModel<T>, g: Signal) -> T {
        let mut worst = T::zero();
        for s in 0..model.n_states() {
            for a in 0..model.n_actions() {
                let ev = crate::scalar::dot(model.next_dist(s, a), &self.v);
                let res = (self.q[(s, a)] - model.signal(g, s, a) + self.gain - ev).abs();
                worst = worst.max(res);
            }
        }
        worst
    }
}

/// Solves `(I − P^π)V + J·1 = g^π` together with `dᵀV = 0` as one square
/// system in `(V, J)`; it is nonsingular exactly when the chain is
/// unichain.
pub fn solve_poisson<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    g: Signal,
) -> Result<PoissonSolution<T>> {
    let chain = PolicyChain::new(model, policy)?;
    poisson_of(&chain, model, g)
}

pub(crate) fn poisson_of<T: Scalar>(
    chain: &PolicyChain<T>,
    model: &CmdpModel<T>,
    g: Signal,
) -> Result<PoissonSolution<T>> {
    let n = model.n_states();
    let m = model.n_actions();
    let gpi = chain.policy_signal(model, g);
    let mut sys = Matrix::zeros(n + 1, n + 1);
    let mut rhs = vec![T::zero(); n + 1];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { T::one() } else { T::zero() };
            sys[(i, j)] = delta - chain.kernel[(i, j)];
        }
        sys[(i, n)] = T::one();
        rhs[i] = gpi[i];
    }
    for j in 0..n {
        sys[(n, j)] = chain.d()[j];
    }
    let sol = solve(&sys, &rhs)?;
    let v = sol[..n].to_vec();
    let gain = sol[n];
    let q = Matrix::from_fn(n, m, |s, a| {
        model.signal(g, s, a) - gain + crate::scalar::dot(model.next_dist(s, a), &v)
    });
    let adv = Matrix::from_fn(n, m, |s, a| q[(s, a)] - v[s]);
    Ok(PoissonSolution { gain, v, q, adv })
}

/// Hitting-time constants of the induced chain.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct UnichainConstants<T> {
    /// `max_s E_s[time to enter the recurrent class]`, 0 without transients.
    pub c_hit: T,
    /// Maximum over recurrent reference states of `Σ_{s'} d(s') E_s[T_{s'}]`.
    pub c_tar: T,
    pub c_total: T,
    /// Expected entry time into the recurrent class from every state.
    pub entry_time: Vec<T>,
    /// `(reference state, Σ_{s'} d(s') E_s[T_{s'}])` for each recurrent state.
    pub c_tar_by_reference: Vec<(usize, T)>,
}

pub fn hitting_constants<T: Scalar>(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>) -> Result<UnichainConstants<T>> {
    let chain = PolicyChain::new(model, policy)?;
    hitting_of(&chain)
}

pub(crate) fn hitting_of<T: Scalar>(chain: &PolicyChain<T>) -> Result<UnichainConstants<T>> {
    let n = chain.kernel.rows();
    let rec = &chain.structure.recurrent;
    let tr = &chain.structure.transient;

    let mut entry_time = vec![T::zero(); n];
    if !tr.is_empty() {
        let t = tr.len();
        let sys = Matrix::from_fn(t, t, |i, j| {
            let delta = if i == j { T::one() } else { T::zero() };
            delta - chain.kernel[(tr[i], tr[j])]
        });
        let h = solve(&sys, &vec![T::one(); t])?;
        for (k, &s) in tr.iter().enumerate() {
            entry_time[s] = h[k];
        }
    }
    let c_hit = entry_time.iter().fold(T::zero(), |m, &x| m.max(x));

    // mean[x][target] = E_x[T_target] on the recurrent class
    let r = rec.len();
    let mut mean = Matrix::zeros(r, r);
    for target in 0..r {
        if r == 1 {
            break;
        }
        let others: Vec<usize> = (0..r).filter(|&i| i != target).collect();
        let sys = Matrix::from_fn(r - 1, r - 1, |i, j| {
            let delta = if i == j { T::one() } else { T::zero() };
            delta - chain.kernel[(rec[others[i]], rec[others[j]])]
        });
        let h = Lu::factor(&sys)?.solve(&vec![T::one(); r - 1]);
        for (k, &x) in others.iter().enumerate() {
            mean[(x, target)] = h[k];
        }
    }
    let d = chain.d();
    let c_tar_by_reference: Vec<(usize, T)> = (0..r)
        .map(|x| {
            let v: T = (0..r).map(|t| d[rec[t]] * mean[(x, t)]).sum();
            (rec[x], v)
        })
        .collect();
    let c_tar = c_tar_by_reference.iter().fold(T::zero(), |m, &(_, v)| m.max(v));
    Ok(UnichainConstants {
        c_hit,
        c_tar,
        c_total: c_hit + c_tar,
        entry_time,
        c_tar_by_reference,
    })
}

/// `‖(1/t) Σ_{i=1..t} (P^π)^i(s0,·) − d‖_TV` for `t = 1..=t_max`.
pub fn cesaro_tv_series<T: Scalar>(kernel: &Matrix<T>, d: &[T], s0: usize, t_max: usize) -> Vec<T> {
    let n = kernel.rows();
    let mut row = vec![T::zero(); n];
    row[s0] = T::one();
    let mut acc = vec![T::zero(); n];
    let mut out = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        row = kernel.vec_mul(&row);
        crate::scalar::axpy(T::one(), &row, &mut acc);
        let inv = T::one() / T::of_usize(t);
        let tv: T = acc
            .iter()
            .zip(d)
            .map(|(&a, &di)| (a * inv - di).abs())
            .sum::<T>()
            * T::of(0.5);
        out.push(tv);
    }
    out
}

pub fn cesaro_tv_check<T: Scalar>(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>, s0: usize, t: usize) -> Result<T> {
    if t == 0 {
        return Err(Error::Config("cesaro horizon must be at least 1".into()));
    }
    let chain = PolicyChain::new(model, policy)?;
    Ok(*cesaro_tv_series(&chain.kernel, chain.d(), s0, t).last().unwrap())
}
