//! Small dense linear algebra: LU solves, one-sided Jacobi SVD, symmetric
//! Jacobi eigendecomposition and pseudoinverse solves.
//!
//! Matrices here are at most a few hundred rows, so everything is plain
//! row-major `Vec` storage with O(n^3) routines.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row vectors; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    /// `xᵀ A`
    pub fn vec_mul(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            crate::scalar::axpy(xi, self.row(i), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    /// `A + s·I`
    pub fn add_diagonal(&self, s: T) -> Self {
        assert!(self.is_square());
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)] += s;
        }
        out
    }

    /// Symmetric part `(A + Aᵀ)/2`.
    pub fn symmetric_part(&self) -> Self {
        assert!(self.is_square());
        let half = T::of(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| {
            half * (self[(i, j)] + self[(j, i)])
        })
    }

    pub fn quadratic_form(&self, x: &[T]) -> T {
        crate::scalar::dot(x, &self.mul_vec(x))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rank-one update `A += s·x yᵀ`.
    pub fn add_outer(&mut self, s: T, x: &[T], y: &[T]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            let sx = s * xi;
            if sx == T::zero() {
                continue;
            }
            crate::scalar::axpy(sx, y, self.row_mut(i));
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Fails with [`Error::SingularSystem`] when a pivot falls below
    /// `solver_tol` relative to the largest entry of `a`.
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        assert!(a.is_square(), "LU needs a square matrix");
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(T::min_positive_value());
        let tol = T::solver_tol() * scale;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= tol {
                return Err(Error::SingularSystem(format!(
                    "pivot {pmax} at column {k} below tolerance"
                )));
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= f * v;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let v = self.lu[(i, j)] * x[j];
                x[i] -= v;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let v = self.lu[(i, j)] * x[j];
                x[i] -= v;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Solves the square system `A x = b`.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(Lu::factor(a)?.solve(b))
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` of an `m × n`
/// matrix. Singular values are sorted in decreasing order.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    /// `m × n`, columns are left singular vectors (zero columns for σ = 0).
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    /// `n × n`, columns are right singular vectors.
    pub v: Matrix<T>,
}

const JACOBI_SWEEPS: usize = 100;

impl<T: Scalar> Svd<T> {
    /// One-sided (Hestenes) Jacobi. Accurate to working precision for the
    /// small matrices used here, including the tiny singular values the
    /// kernel decisions depend on.
    pub fn new(a: &Matrix<T>) -> Self {
        let (m, n) = (a.rows(), a.cols());
        let mut w = a.clone();
        let mut v = Matrix::identity(n);
        let eps = T::epsilon();
        for _ in 0..JACOBI_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for i in 0..m {
                        let (wp, wq) = (w[(i, p)], w[(i, q)]);
                        alpha += wp * wp;
                        beta += wq * wq;
                        gamma += wp * wq;
                    }
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let (wp, wq) = (w[(i, p)], w[(i, q)]);
                        w[(i, p)] = c * wp - s * wq;
                        w[(i, q)] = s * wp + c * wq;
                    }
                    for i in 0..n {
                        let (vp, vq) = (v[(i, p)], v[(i, q)]);
                        v[(i, p)] = c * vp - s * vq;
                        v[(i, q)] = s * vp + c * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sigma: Vec<T> = (0..n)
            .map(|j| (0..m).map(|i| w[(i, j)] * w[(i, j)]).sum::<T>().sqrt())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
        let mut u = Matrix::zeros(m, n);
        let mut vs = Matrix::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            let s = sigma[old];
            for i in 0..m {
                u[(i, new)] = if s > T::zero() { w[(i, old)] / s } else { T::zero() };
            }
            for i in 0..n {
                vs[(i, new)] = v[(i, old)];
            }
        }
        sigma = order.iter().map(|&i| sigma[i]).collect();
        Self { u, sigma, v: vs }
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let cut = self.cutoff(rel_tol);
        self.sigma.iter().filter(|&&s| s > cut).count()
    }

    fn cutoff(&self, rel_tol: T) -> T {
        rel_tol * self.sigma.first().copied().unwrap_or(T::zero())
    }

    /// Orthonormal basis (as vectors) of the numerical right null space.
    pub fn kernel_basis(&self, rel_tol: T) -> Vec<Vec<T>> {
        let r = self.rank(rel_tol);
        (r..self.v.cols()).map(|j| self.v.column(j)).collect()
    }

    /// Orthonormal basis of the row space, the orthogonal complement of
    /// the kernel.
    pub fn range_basis(&self, rel_tol: T) -> Vec<Vec<T>> {
        let r = self.rank(rel_tol);
        (0..r).map(|j| self.v.column(j)).collect()
    }

    /// Minimum-norm least-squares solution `A⁺ b`.
    pub fn pinv_solve(&self, b: &[T], rel_tol: T) -> Vec<T> {
        let r = self.rank(rel_tol);
        let n = self.v.rows();
        let mut x = vec![T::zero(); n];
        for j in 0..r {
            let coef = crate::scalar::dot(&self.u.column(j), b) / self.sigma[j];
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += coef * self.v[(i, j)];
            }
        }
        x
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
/// symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.symmetric_part();
    let mut v = Matrix::identity(n);
    for _ in 0..JACOBI_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= T::epsilon() * T::epsilon() * m.frobenius().powi(2) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let vals = order.iter().map(|&i| m[(i, i)]).collect();
    let vecs = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lu_solves_small_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = solve(&a, &[3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(x[0], 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.4, epsilon = 1e-14);
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(solve(&a, &[1.0, 1.0]), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn svd_reconstructs_and_finds_kernel() {
        let a = Matrix::from_rows(&[vec![0.5f64, -0.5], vec![-0.5, 0.5]]);
        let svd = Svd::new(&a);
        assert_abs_diff_eq!(svd.sigma[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(svd.sigma[1], 0.0, epsilon = 1e-14);
        let k = svd.kernel_basis(1e-8);
        assert_eq!(k.len(), 1);
        assert_abs_diff_eq!(k[0][0].abs(), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(k[0][0], k[0][1], epsilon = 1e-14);
    }

    #[test]
    fn pinv_gives_min_norm_solution() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let svd = Svd::new(&a);
        let x = svd.pinv_solve(&[2.0, 2.0], 1e-8);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_eigen_matches_closed_form() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (vals, vecs) = symmetric_eigen(&a);
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(vals[1], 3.0, epsilon = 1e-13);
        let v0 = vecs.column(0);
        let av = a.mul_vec(&v0);
        assert_abs_diff_eq!(av[0], v0[0], epsilon = 1e-13);
    }

    #[test]
    fn svd_of_rectangular_matrix() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0], vec![0.0, 0.0]]);
        let svd = Svd::new(&a);
        assert_abs_diff_eq!(svd.sigma[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(svd.sigma[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let x = solve(&a, &[1.0, 2.0]).unwrap();
        let r = a.mul_vec(&x);
        assert!((r[0] - 1.0).abs() < 1e-5 && (r[1] - 2.0).abs() < 1e-5);
    }
}
