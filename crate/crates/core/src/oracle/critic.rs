//! Exact linear-critic quantities: the stationary critic matrix `A_g(θ)`,
//! vector `b_g(θ)`, fixed point, and the kernel structure of the feature
//! matrix `M_θ^g`.

use serde::Serialize;

use crate::error::Result;
use crate::linalg::{symmetric_eigen, Matrix, Svd};
use crate::model::{CmdpModel, FeatureMap, Signal, SoftmaxPolicy};
use crate::oracle::chain::PolicyChain;
use crate::oracle::KERNEL_REL_TOL;
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug)]
pub struct CriticGroundTruth<T> {
    pub c_gamma: T,
    /// `(1+m) × (1+m)`
    pub a_matrix: Matrix<T>,
    pub b_vector: Vec<T>,
    /// `M = E[φ(s)(φ(s) − φ(s'))ᵀ]`
    pub m_matrix: Matrix<T>,
    /// `A⁺ b`
    pub xi_star: Vec<T>,
    /// Orthonormal basis of `ker(M)`.
    pub kernel_basis: Vec<Vec<T>>,
    /// Orthonormal basis of `ker(M)⊥`.
    pub complement_basis: Vec<Vec<T>>,
    /// `min xᵀ M x` over unit `x ⊥ ker(M)`; `None` when `M = 0`.
    pub lambda_subspace: Option<T>,
}

/// Snapshot of the critic ground truth in report form.
#[derive(Clone, Debug, Serialize)]
pub struct CriticSummary {
    pub c_gamma: f64,
    pub xi_star: Vec<f64>,
    pub kernel_dim: usize,
    pub lambda_subspace: Option<f64>,
}

pub fn critic_ground_truth<T: Scalar>(
    model: &CmdpModel<T>,
    policy: &SoftmaxPolicy<T>,
    features: &FeatureMap<T>,
    c_gamma: T,
    g: Signal,
) -> Result<CriticGroundTruth<T>> {
    features.check_model(model)?;
    let chain = PolicyChain::new(model, policy)?;
    Ok(critic_of(&chain, model, features, c_gamma, g))
}

pub(crate) fn critic_of<T: Scalar>(
    chain: &PolicyChain<T>,
    model: &CmdpModel<T>,
    features: &FeatureMap<T>,
    c_gamma: T,
    g: Signal,
) -> CriticGroundTruth<T> {
    let n = model.n_states();
    let m = features.dimension();
    let d = chain.d();
    let gpi = chain.policy_signal(model, g);

    let mut mean_phi = vec![T::zero(); m];
    let mut m_matrix = Matrix::zeros(m, m);
    let mut b_zeta = vec![T::zero(); m];
    for s in 0..n {
        if d[s] == T::zero() {
            continue;
        }
        let phi = features.phi(s);
        // E[φ(s') | s] under the policy
        let mut next_phi = vec![T::zero(); m];
        for s2 in 0..n {
            let p = chain.kernel[(s, s2)];
            if p != T::zero() {
                crate::scalar::axpy(p, features.phi(s2), &mut next_phi);
            }
        }
        let diff: Vec<T> = phi.iter().zip(&next_phi).map(|(&a, &b)| a - b).collect();
        m_matrix.add_outer(d[s], phi, &diff);
        crate::scalar::axpy(d[s], phi, &mut mean_phi);
        crate::scalar::axpy(d[s] * gpi[s], phi, &mut b_zeta);
    }
    let gain = dot(d, &gpi);

    let mut a_matrix = Matrix::zeros(m + 1, m + 1);
    a_matrix[(0, 0)] = c_gamma;
    for i in 0..m {
        a_matrix[(i + 1, 0)] = mean_phi[i];
        for j in 0..m {
            a_matrix[(i + 1, j + 1)] = m_matrix[(i, j)];
        }
    }
    let mut b_vector = Vec::with_capacity(m + 1);
    b_vector.push(c_gamma * gain);
    b_vector.extend(b_zeta);

    let tol = T::of(KERNEL_REL_TOL);
    let xi_star = Svd::new(&a_matrix).pinv_solve(&b_vector, tol);
    let m_svd = Svd::new(&m_matrix);
    // a self-loop row summing to 1 − ε leaves O(ε) entries in an exactly
    // zero M
    let negligible = T::of(KERNEL_REL_TOL).max(T::solver_tol());
    let (kernel_basis, complement_basis) = if m_matrix.max_abs() <= negligible {
        ((0..m).map(|j| Matrix::<T>::identity(m).column(j)).collect(), Vec::new())
    } else {
        (m_svd.kernel_basis(tol), m_svd.range_basis(tol))
    };
    let lambda_subspace = restricted_min_quadratic(&m_matrix, &complement_basis);

    CriticGroundTruth {
        c_gamma,
        a_matrix,
        b_vector,
        m_matrix,
        xi_star,
        kernel_basis,
        complement_basis,
        lambda_subspace,
    }
}

/// `min xᵀ M x` over unit `x` in the span of an orthonormal basis.
fn restricted_min_quadratic<T: Scalar>(m: &Matrix<T>, basis: &[Vec<T>]) -> Option<T> {
    if basis.is_empty() {
        return None;
    }
    let k = basis.len();
    let sym = m.symmetric_part();
    let reduced = Matrix::from_fn(k, k, |i, j| dot(&basis[i], &sym.mul_vec(&basis[j])));
    Some(symmetric_eigen(&reduced).0[0])
}

impl<T: Scalar> CriticGroundTruth<T> {
    pub fn dim(&self) -> usize {
        self.b_vector.len()
    }

    /// `A ξ − b`, the exact mean of the per-transition critic gradient.
    pub fn mean_gradient(&self, xi: &[T]) -> Vec<T> {
        let mut out = self.a_matrix.mul_vec(xi);
        for (o, &b) in out.iter_mut().zip(&self.b_vector) {
            *o -= b;
        }
        out
    }

    /// `Π ξ`: keeps `η` and removes the `ker(M)` component of `ζ`.
    pub fn project(&self, xi: &[T]) -> Vec<T> {
        let mut out = xi.to_vec();
        let zeta = &mut out[1..];
        for k in &self.kernel_basis {
            let c = dot(k, zeta);
            crate::scalar::axpy(-c, k, zeta);
        }
        out
    }

    /// `‖Π(ξ − ξ*)‖²`
    pub fn projected_error_sq(&self, xi: &[T]) -> T {
        let diff: Vec<T> = xi.iter().zip(&self.xi_star).map(|(&a, &b)| a - b).collect();
        let p = self.project(&diff);
        dot(&p, &p)
    }

    /// Kernel of the full critic matrix `A_g(θ)`, computed independently of
    /// `kernel_basis` from an SVD of `A`.
    pub fn a_kernel_basis(&self) -> Vec<Vec<T>> {
        Svd::new(&self.a_matrix).kernel_basis(T::of(KERNEL_REL_TOL))
    }

    pub fn summary(&self) -> CriticSummary {
        CriticSummary {
            c_gamma: self.c_gamma.as_f64(),
            xi_star: self.xi_star.iter().map(|x| x.as_f64()).collect(),
            kernel_dim: self.kernel_basis.len(),
            lambda_subspace: self.lambda_subspace.map(Scalar::as_f64),
        }
    }
}
