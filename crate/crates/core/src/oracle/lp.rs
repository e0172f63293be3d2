//! Occupancy-measure linear program for the constrained average-reward
//! problem, solved with a dense two-phase simplex (Bland's rule).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::CmdpModel;
use crate::scalar::Scalar;

/// `max cᵀx  s.t.  A x = b, x ≥ 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub a_eq: Vec<Vec<T>>,
    pub b_eq: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LpOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
}

fn lp_tol<T: Scalar>() -> T {
    T::solver_tol().sqrt() * T::of(1e-2)
}

struct Tableau<T> {
    /// `rows × (vars + 1)`, last column is the right-hand side.
    t: Matrix<T>,
    basis: Vec<usize>,
    vars: usize,
}

impl<T: Scalar> Tableau<T> {
    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn rhs(&self, i: usize) -> T {
        self.t[(i, self.vars)]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.vars + 1;
        let p = self.t[(r, c)];
        for j in 0..w {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.rows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f == T::zero() {
                continue;
            }
            for j in 0..w {
                let v = self.t[(r, j)];
                self.t[(i, j)] -= f * v;
            }
        }
        self.basis[r] = c;
    }

    fn optimize(&mut self, cost: &[T], allowed: &[bool]) -> Result<()> {
        let tol = lp_tol::<T>();
        let max_iter = 50 * (self.vars + self.rows()) + 1000;
        for _ in 0..max_iter {
            let entering = (0..self.vars).find(|&j| {
                if !allowed[j] || self.basis.contains(&j) {
                    return false;
                }
                let rc = cost[j]
                    - (0..self.rows())
                        .map(|i| cost[self.basis[i]] * self.t[(i, j)])
                        .sum::<T>();
                rc > tol
            });
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for i in 0..self.rows() {
                let a = self.t[(i, col)];
                if a > tol {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - tol || ((ratio - lr).abs() <= tol && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(row, col);
        }
        Err(Error::Infeasible("simplex iteration limit reached".into()))
    }

    fn solution(&self, n: usize) -> Vec<T> {
        let mut x = vec![T::zero(); n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] = self.rhs(i).max(T::zero());
            }
        }
        x
    }
}

impl<T: Scalar> LinearProgram<T> {
    pub fn solve(&self) -> Result<LpOutcome<T>> {
        let n = self.objective.len();
        let m = self.a_eq.len();
        let tol = lp_tol::<T>();
        let vars = n + m;
        let mut t = Matrix::zeros(m, vars + 1);
        for (i, (row, &b)) in self.a_eq.iter().zip(&self.b_eq).enumerate() {
            assert_eq!(row.len(), n, "constraint row width");
            let sign = if b < T::zero() { -T::one() } else { T::one() };
            for j in 0..n {
                t[(i, j)] = sign * row[j];
            }
            t[(i, n + i)] = T::one();
            t[(i, vars)] = sign * b;
        }
        let mut tab = Tableau {
            t,
            basis: (n..n + m).collect(),
            vars,
        };

        // phase 1: drive the artificials to zero
        let mut phase1 = vec![T::zero(); vars];
        for c in &mut phase1[n..] {
            *c = -T::one();
        }
        tab.optimize(&phase1, &vec![true; vars])?;
        let infeas: T = (0..m).filter(|&i| tab.basis[i] >= n).map(|i| tab.rhs(i)).sum();
        if infeas > tol {
            return Err(Error::Infeasible(format!("phase-1 residual {infeas}")));
        }
        // pivot remaining artificials out; drop redundant rows
        let mut i = 0;
        while i < tab.rows() {
            if tab.basis[i] >= n {
                match (0..n).find(|&j| tab.t[(i, j)].abs() > tol && !tab.basis.contains(&j)) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        let keep: Vec<usize> = (0..tab.rows()).filter(|&r| r != i).collect();
                        tab.t = Matrix::from_fn(keep.len(), vars + 1, |r, c| tab.t[(keep[r], c)]);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }

        let mut phase2 = vec![T::zero(); vars];
        phase2[..n].copy_from_slice(&self.objective);
        let allowed: Vec<bool> = (0..vars).map(|j| j < n).collect();
        tab.optimize(&phase2, &allowed)?;
        let x = tab.solution(n);
        let value = crate::scalar::dot(&x, &self.objective);
        Ok(LpOutcome { x, value })
    }
}

/// Optimal occupancy measure of the constrained problem.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct CmdpLpSolution<T> {
    /// `ν*(s,a)`, rows indexed by state.
    #[serde(skip)]
    pub occupancy: Matrix<T>,
    pub j_r_star: T,
    pub j_c_star: T,
    /// `max_ν Σ ν(s,a) c(s,a)` over all stationary occupancies.
    pub slater_delta: T,
}

impl<T: Scalar> CmdpLpSolution<T> {
    /// `π*(a|s) = ν*(s,a) / Σ_a ν*(s,a)`, uniform where `ν*(s,·) = 0`.
    pub fn policy(&self) -> Matrix<T> {
        let (n, m) = (self.occupancy.rows(), self.occupancy.cols());
        Matrix::from_fn(n, m, |s, a| {
            let total: T = self.occupancy.row(s).iter().copied().sum();
            if total > T::zero() {
                self.occupancy[(s, a)] / total
            } else {
                T::one() / T::of_usize(m)
            }
        })
    }

    /// Largest flow-conservation residual of `ν*`.
    pub fn flow_residual(&self, model: &CmdpModel<T>) -> T {
        flow_residual(model, &self.occupancy)
    }
}

pub fn flow_residual<T: Scalar>(model: &CmdpModel<T>, nu: &Matrix<T>) -> T {
    let (n, m) = (model.n_states(), model.n_actions());
    let mut worst = T::zero();
    for s2 in 0..n {
        let out: T = nu.row(s2).iter().copied().sum();
        let inflow: T = (0..n)
            .flat_map(|s| (0..m).map(move |a| (s, a)))
            .map(|(s, a)| model.next_dist(s, a)[s2] * nu[(s, a)])
            .sum();
        worst = worst.max((out - inflow).abs());
    }
    worst
}

fn flow_rows<T: Scalar>(model: &CmdpModel<T>, extra_cols: usize) -> (Vec<Vec<T>>, Vec<T>) {
    let (n, m) = (model.n_states(), model.n_actions());
    let width = n * m + extra_cols;
    let mut rows = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    let mut norm = vec![T::zero(); width];
    for v in &mut norm[..n * m] {
        *v = T::one();
    }
    rows.push(norm);
    rhs.push(T::one());
    for s2 in 0..n {
        let mut row = vec![T::zero(); width];
        for s in 0..n {
            for a in 0..m {
                let idx = s * m + a;
                if s == s2 {
                    row[idx] += T::one();
                }
                row[idx] -= model.next_dist(s, a)[s2];
            }
        }
        rows.push(row);
        rhs.push(T::zero());
    }
    (rows, rhs)
}

/// Solves `max Σν r` over stationary occupancies with `Σν c ≥ 0`, plus the
/// Slater margin `max Σν c`.
pub fn solve_cmdp_lp<T: Scalar>(model: &CmdpModel<T>) -> Result<CmdpLpSolution<T>> {
    let (n, m) = (model.n_states(), model.n_actions());
    let nm = n * m;
    let reward: Vec<T> = (0..n).flat_map(|s| (0..m).map(move |a| (s, a))).map(|(s, a)| model.reward(s, a)).collect();
    let cost: Vec<T> = (0..n).flat_map(|s| (0..m).map(move |a| (s, a))).map(|(s, a)| model.cost(s, a)).collect();

    let (rows, rhs) = flow_rows(model, 0);
    let slater = LinearProgram {
        objective: cost.clone(),
        a_eq: rows,
        b_eq: rhs,
    }
    .solve()?;
    if slater.value < -lp_tol::<T>() {
        return Err(Error::Infeasible(format!(
            "best achievable average cost is {}, constraint needs ≥ 0",
            slater.value
        )));
    }

    let (mut rows, mut rhs) = flow_rows(model, 1);
    let mut crow = vec![T::zero(); nm + 1];
    crow[..nm].copy_from_slice(&cost);
    crow[nm] = -T::one();
    rows.push(crow);
    rhs.push(T::zero());
    let mut objective = reward.clone();
    objective.push(T::zero());
    let main = LinearProgram {
        objective,
        a_eq: rows,
        b_eq: rhs,
    }
    .solve()?;
    let x = &main.x[..nm];
    let occupancy = Matrix::from_fn(n, m, |s, a| x[s * m + a]);
    Ok(CmdpLpSolution {
        j_r_star: crate::scalar::dot(x, &reward),
        j_c_star: crate::scalar::dot(x, &cost),
        slater_delta: slater.value,
        occupancy,
    })
}
