//! Exact policy-gradient, Fisher and natural-gradient quantities.

use crate::error::Result;
use crate::linalg::{solve, symmetric_eigen, Matrix, Svd};
use crate::model::{CmdpModel, FeatureMap, Signal, SoftmaxPolicy};
use crate::oracle::chain::{poisson_of, PolicyChain};
use crate::oracle::KERNEL_REL_TOL;
use crate::scalar::{axpy, dot, Scalar};

/// `∇J_g(θ) = Σ_{s,a} d(s) π(a|s) A_g(s,a) ∇log π(a|s)`.
pub fn policy_gradient_exact<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    g: Signal,
) -> Result<Vec<T>> {
    let chain = PolicyChain::new(model, policy)?;
    gradient_of(&chain, model, policy, g)
}

pub(crate) fn gradient_of<T: Scalar>(
    chain: &PolicyChain<T>,
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    g: Signal,
) -> Result<Vec<T>> {
    let sol = poisson_of(chain, model, g)?;
    Ok(weighted_score_sum(chain, policy, |s, a| sol.adv[(s, a)]))
}

/// `Σ_{s,a} ν(s,a) w(s,a) ∇log π(a|s)`
fn weighted_score_sum<T: Scalar>(
    chain: &PolicyChain<T>,
    policy: &SoftmaxPolicy<T>,
    w: impl Fn(usize, usize) -> T,
) -> Vec<T> {
    let na = policy.n_actions();
    let mut grad = vec![T::zero(); policy.dim()];
    for s in 0..policy.n_states() {
        if chain.d()[s] == T::zero() {
            continue;
        }
        for a in 0..na {
            let weight = chain.occupancy(s, a) * w(s, a);
            axpy(weight, &policy.score_block(s, a), &mut grad[s * na..(s + 1) * na]);
        }
    }
    grad
}

/// `F(θ) = Σ_{s,a} ν(s,a) ∇log π ⊗ ∇log π`.
#[derive(Clone, Debug)]
pub struct FisherMatrix<T> {
    pub matrix: Matrix<T>,
}

impl<T: Scalar> FisherMatrix<T> {
    /// `(F + ε I)⁻¹ v`
    pub fn solve_regularized(&self, eps_reg: T, v: &[T]) -> Result<Vec<T>> {
        solve(&self.matrix.add_diagonal(eps_reg), v)
    }

    /// `F⁺ v`
    pub fn pinv_solve(&self, v: &[T]) -> Vec<T> {
        Svd::new(&self.matrix).pinv_solve(v, T::of(KERNEL_REL_TOL))
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        symmetric_eigen(&self.matrix).0
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues()[0]
    }

    /// Smallest eigenvalue on the range of `F`, i.e. the smallest one
    /// above the kernel threshold.
    pub fn min_positive_eigenvalue(&self) -> Option<T> {
        let vals = self.eigenvalues();
        let top = vals.last().copied().unwrap_or(T::zero());
        vals.into_iter().find(|&v| v > T::of(KERNEL_REL_TOL) * top)
    }

    pub fn max_eigenvalue(&self) -> T {
        *self.eigenvalues().last().unwrap()
    }
}

pub fn fisher_exact<T: Scalar>(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>) -> Result<FisherMatrix<T>> {
    let chain = PolicyChain::new(model, policy)?;
    Ok(fisher_of(&chain, policy))
}

pub(crate) fn fisher_of<T: Scalar>(chain: &PolicyChain<T>, policy: &SoftmaxPolicy<T>) -> FisherMatrix<T> {
    let na = policy.n_actions();
    let d = policy.dim();
    let mut f = Matrix::zeros(d, d);
    for s in 0..policy.n_states() {
        if chain.d()[s] == T::zero() {
            continue;
        }
        for a in 0..na {
            let w = chain.occupancy(s, a);
            let block = policy.score_block(s, a);
            for (i, &bi) in block.iter().enumerate() {
                for (j, &bj) in block.iter().enumerate() {
                    f[(s * na + i, s * na + j)] += w * bi * bj;
                }
            }
        }
    }
    FisherMatrix { matrix: f }
}

/// Natural gradient directions for one signal.
#[derive(Clone, Debug)]
pub struct NpgDirection<T> {
    /// `(F + ε I)⁻¹ ∇J_g`
    pub regularized: Vec<T>,
    /// `F⁺ ∇J_g`
    pub min_norm: Vec<T>,
    pub gradient: Vec<T>,
}

pub fn npg_exact<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    g: Signal,
    eps_reg: T,
) -> Result<NpgDirection<T>> {
    let chain = PolicyChain::new(model, policy)?;
    npg_of(&chain, model, policy, g, eps_reg)
}

pub(crate) fn npg_of<T: Scalar>(
    chain: &PolicyChain<T>,
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    g: Signal,
    eps_reg: T,
) -> Result<NpgDirection<T>> {
    let fisher = fisher_of(chain, policy);
    let gradient = gradient_of(chain, model, policy, g)?;
    Ok(NpgDirection {
        regularized: fisher.solve_regularized(eps_reg, &gradient)?,
        min_norm: fisher.pinv_solve(&gradient),
        gradient,
    })
}

/// `f_g(θ, ω) = ½ ωᵀ F ω − ωᵀ ∇J_g`
pub fn npg_objective<T: Scalar>(fisher: &FisherMatrix<T>, gradient: &[T], omega: &[T]) -> T {
    T::of(0.5) * fisher.matrix.quadratic_form(omega) - dot(omega, gradient)
}

/// `L(ω) = ½ E_ν[(A_λ(s,a) − ωᵀ∇log π(a|s))²]` with `A_λ = A_r − λ A_c`.
pub fn compat_error_exact<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    lambda: T,
    omega: &[T],
) -> Result<T> {
    let chain = PolicyChain::new(model, policy)?;
    let ar = poisson_of(&chain, model, Signal::Reward)?;
    let ac = poisson_of(&chain, model, Signal::Cost)?;
    let na = policy.n_actions();
    let mut total = T::zero();
    for s in 0..model.n_states() {
        for a in 0..na {
            let w = chain.occupancy(s, a);
            if w == T::zero() {
                continue;
            }
            let adv = ar.adv[(s, a)] - lambda * ac.adv[(s, a)];
            let fit = dot(&omega[s * na..(s + 1) * na], &policy.score_block(s, a));
            total += w * (adv - fit) * (adv - fit);
        }
    }
    Ok(T::of(0.5) * total)
}

/// Stationary mean of the critic-based gradient estimate,
/// `Σ ν(s,a) [g(s,a) − η + ζᵀ(E[φ(s')|s,a] − φ(s))] ∇log π(a|s)`.
pub fn critic_gradient_exact<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    features: &FeatureMap<T>,
    eta: T,
    zeta: &[T],
    g: Signal,
) -> Result<Vec<T>> {
    let chain = PolicyChain::new(model, policy)?;
    Ok(critic_gradient_of(&chain, model, policy, features, eta, zeta, g))
}

pub(crate) fn critic_gradient_of<T: Scalar>(
    chain: &PolicyChain<T>,
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    features: &FeatureMap<T>,
    eta: T,
    zeta: &[T],
    g: Signal,
) -> Vec<T> {
    let value: Vec<T> = (0..model.n_states()).map(|s| dot(features.phi(s), zeta)).collect();
    weighted_score_sum(chain, policy, |s, a| {
        let next = dot(model.next_dist(s, a), &value);
        model.signal(g, s, a) - eta + next - value[s]
    })
}

/// Stationary mean of the per-transition NPG gradient,
/// `F ω − E[Â ∇log π]`.
pub fn npg_mean_gradient<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    features: &FeatureMap<T>,
    eta: T,
    zeta: &[T],
    omega: &[T],
    g: Signal,
) -> Result<Vec<T>> {
    let chain = PolicyChain::new(model, policy)?;
    let fisher = fisher_of(&chain, policy);
    let mut out = fisher.matrix.mul_vec(omega);
    let grad = critic_gradient_of(&chain, model, policy, features, eta, zeta, g);
    axpy(-T::one(), &grad, &mut out);
    Ok(out)
}
