//! Tabular constrained MDPs, full-support softmax policies and critic
//! feature maps.

use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Which per-step signal an estimator or oracle targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Reward,
    Cost,
}

impl Signal {
    pub const BOTH: [Signal; 2] = [Signal::Reward, Signal::Cost];
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Reward => f.write_str("reward"),
            Signal::Cost => f.write_str("cost"),
        }
    }
}

/// On-disk layout of a model: nested arrays, validated on conversion.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Scalar")]
pub struct ModelFile<T> {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<T>>>,
    pub reward: Vec<Vec<T>>,
    pub cost: Vec<Vec<T>>,
    pub initial_dist: Vec<T>,
}

/// A tabular CMDP `(S, A, r, c, P, ρ)` with rewards in `[0, 1]` and costs
/// in `[-1, 1]`. The constraint is `J_c ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile<T>", into = "ModelFile<T>")]
#[serde(bound = "T: Scalar")]
pub struct CmdpModel<T> {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened.
    transition: Vec<T>,
    reward: Vec<T>,
    cost: Vec<T>,
    initial_dist: Vec<T>,
}

fn check_prob_vector<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    let tol = T::prob_tol();
    if v.iter().any(|&p| !p.is_finite() || p < T::zero()) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let total: T = v.iter().copied().sum();
    if (total - T::one()).abs() > tol * T::of_usize(v.len().max(1)) {
        return Err(Error::InvalidModel(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl<T: Scalar> CmdpModel<T> {
    pub fn from_file(file: ModelFile<T>) -> Result<Self> {
        let ModelFile {
            n_states: n,
            n_actions: m,
            transition,
            reward,
            cost,
            initial_dist,
        } = file;
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel("n_states and n_actions must be positive".into()));
        }
        let shape_err = |what: &str| Error::InvalidModel(format!("{what} has the wrong shape"));
        if transition.len() != n || transition.iter().any(|r| r.len() != m) {
            return Err(shape_err("transition"));
        }
        if transition.iter().flatten().any(|row| row.len() != n) {
            return Err(shape_err("transition"));
        }
        if reward.len() != n || reward.iter().any(|r| r.len() != m) {
            return Err(shape_err("reward"));
        }
        if cost.len() != n || cost.iter().any(|r| r.len() != m) {
            return Err(shape_err("cost"));
        }
        if initial_dist.len() != n {
            return Err(shape_err("initial_dist"));
        }
        for (s, rows) in transition.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                check_prob_vector(row, &format!("transition row P[{s}][{a}]"))?;
            }
        }
        let tol = T::prob_tol();
        if reward
            .iter()
            .flatten()
            .any(|&r| !r.is_finite() || r < -tol || r > T::one() + tol)
        {
            return Err(Error::InvalidModel("reward entries must lie in [0, 1]".into()));
        }
        if cost
            .iter()
            .flatten()
            .any(|&c| !c.is_finite() || c < -T::one() - tol || c > T::one() + tol)
        {
            return Err(Error::InvalidModel("cost entries must lie in [-1, 1]".into()));
        }
        check_prob_vector(&initial_dist, "initial_dist")?;
        Ok(Self {
            n_states: n,
            n_actions: m,
            transition: transition.into_iter().flatten().flatten().collect(),
            reward: reward.into_iter().flatten().collect(),
            cost: cost.into_iter().flatten().collect(),
            initial_dist,
        })
    }

    pub fn to_file(&self) -> ModelFile<T> {
        let (n, m) = (self.n_states, self.n_actions);
        ModelFile {
            n_states: n,
            n_actions: m,
            transition: (0..n)
                .map(|s| (0..m).map(|a| self.next_dist(s, a).to_vec()).collect())
                .collect(),
            reward: self.reward.chunks(m).map(<[T]>::to_vec).collect(),
            cost: self.cost.chunks(m).map(<[T]>::to_vec).collect(),
            initial_dist: self.initial_dist.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `P(·|s,a)`
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[T] {
        let n = self.n_states;
        let base = (s * self.n_actions + a) * n;
        &self.transition[base..base + n]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> T {
        self.reward[s * self.n_actions + a]
    }

    #[inline]
    pub fn cost(&self, s: usize, a: usize) -> T {
        self.cost[s * self.n_actions + a]
    }

    #[inline]
    pub fn signal(&self, g: Signal, s: usize, a: usize) -> T {
        match g {
            Signal::Reward => self.reward(s, a),
            Signal::Cost => self.cost(s, a),
        }
    }

    pub fn initial_dist(&self) -> &[T] {
        &self.initial_dist
    }

    /// Copy of the model with a different signal table for `g`; used by
    /// tests that need arbitrary (e.g. constant) signals.
    pub fn with_signal(&self, g: Signal, table: Vec<Vec<T>>) -> Result<Self> {
        let mut file = self.to_file();
        match g {
            Signal::Reward => file.reward = table,
            Signal::Cost => file.cost = table,
        }
        Self::from_file(file)
    }

    pub fn with_initial_dist(&self, rho: Vec<T>) -> Result<Self> {
        let mut file = self.to_file();
        file.initial_dist = rho;
        Self::from_file(file)
    }
}

impl<T: Scalar> TryFrom<ModelFile<T>> for CmdpModel<T> {
    type Error = Error;

    fn try_from(file: ModelFile<T>) -> Result<Self> {
        Self::from_file(file)
    }
}

impl<T: Scalar> From<CmdpModel<T>> for ModelFile<T> {
    fn from(model: CmdpModel<T>) -> Self {
        model.to_file()
    }
}

/// Tabular softmax policy `π_θ(a|s) ∝ exp(θ[s,a] / τ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SoftmaxPolicy<T> {
    n_states: usize,
    n_actions: usize,
    theta: Vec<T>,
    temperature: T,
}

impl<T: Scalar> SoftmaxPolicy<T> {
    pub fn new(n_states: usize, n_actions: usize, theta: Vec<T>) -> Result<Self> {
        if theta.len() != n_states * n_actions {
            return Err(Error::Config(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                n_states * n_actions
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("theta must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            theta,
            temperature: T::one(),
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            theta: vec![T::zero(); n_states * n_actions],
            temperature: T::one(),
        }
    }

    pub fn for_model(model: &CmdpModel<T>, theta: Vec<T>) -> Result<Self> {
        Self::new(model.n_states(), model.n_actions(), theta)
    }

    pub fn with_temperature(mut self, temperature: T) -> Result<Self> {
        if !temperature.is_finite() || temperature <= T::zero() {
            return Err(Error::Config("temperature must be positive".into()));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<T> {
        self.theta
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    /// Parameter dimension `|S|·|A|`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Same temperature, new logits.
    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        let mut p = Self::new(self.n_states, self.n_actions, theta)?;
        p.temperature = self.temperature;
        Ok(p)
    }

    pub fn check_model(&self, model: &CmdpModel<T>) -> Result<()> {
        if self.n_states != model.n_states() || self.n_actions != model.n_actions() {
            return Err(Error::Config(format!(
                "policy is {}x{}, model is {}x{}",
                self.n_states,
                self.n_actions,
                model.n_states(),
                model.n_actions()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// `π_θ(·|s)`, computed with the max-shift so it is exactly invariant
    /// to adding a constant to the logits of `s`.
    pub fn action_distribution(&self, s: usize) -> Vec<T> {
        let logits = &self.theta[s * self.n_actions..(s + 1) * self.n_actions];
        let tau = self.temperature;
        let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut probs: Vec<T> = logits.iter().map(|&x| ((x - max) / tau).exp()).collect();
        let z: T = probs.iter().copied().sum();
        for p in &mut probs {
            *p /= z;
        }
        probs
    }

    /// `π_θ(a|s)` for every state, rows indexed by state.
    pub fn probabilities(&self) -> Matrix<T> {
        Matrix::from_rows(
            &(0..self.n_states)
                .map(|s| self.action_distribution(s))
                .collect::<Vec<_>>(),
        )
    }

    /// Nonzero block of the score at `(s, a)`: entry `a'` is
    /// `(1{a'=a} − π(a'|s)) / τ`. It occupies parameter indices
    /// `s·|A| .. (s+1)·|A|`.
    pub fn score_block(&self, s: usize, a: usize) -> Vec<T> {
        let inv_tau = self.temperature.recip();
        let mut block = self.action_distribution(s);
        for (b, p) in block.iter_mut().enumerate() {
            let ind = if b == a { T::one() } else { T::zero() };
            *p = (ind - *p) * inv_tau;
        }
        block
    }

    /// `∇_θ log π_θ(a|s)` as a dense vector of length `dim()`.
    pub fn score(&self, s: usize, a: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        let start = s * self.n_actions;
        out[start..start + self.n_actions].copy_from_slice(&self.score_block(s, a));
        out
    }

    /// Score-norm bound `G₁ = √2 / τ` of the tabular softmax class.
    pub fn score_bound(&self) -> T {
        T::SQRT_2() / self.temperature
    }
}

/// Linear critic features `φ_g : S → R^m` stored as a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureMap<T> {
    target: Signal,
    dimension: usize,
    table: Vec<Vec<T>>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(target: Signal, table: Vec<Vec<T>>) -> Result<Self> {
        let dimension = table.first().map_or(0, Vec::len);
        if dimension == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if table.iter().any(|row| row.len() != dimension) {
            return Err(Error::Config("ragged feature table".into()));
        }
        for (s, row) in table.iter().enumerate() {
            let n = crate::scalar::norm(row);
            if !n.is_finite() || n > T::one() + T::prob_tol() {
                return Err(Error::Config(format!("feature norm at state {s} is {n} > 1")));
            }
        }
        Ok(Self {
            target,
            dimension,
            table,
        })
    }

    /// `φ(s) = e_s`.
    pub fn one_hot(n_states: usize, target: Signal) -> Self {
        let table = (0..n_states)
            .map(|s| {
                let mut v = vec![T::zero(); n_states];
                v[s] = T::one();
                v
            })
            .collect();
        Self {
            target,
            dimension: n_states,
            table,
        }
    }

    pub fn target(&self) -> Signal {
        self.target
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    #[inline]
    pub fn phi(&self, s: usize) -> &[T] {
        &self.table[s]
    }

    pub fn check_model(&self, model: &CmdpModel<T>) -> Result<()> {
        if self.table.len() != model.n_states() {
            return Err(Error::Config(format!(
                "feature table covers {} states, model has {}",
                self.table.len(),
                model.n_states()
            )));
        }
        Ok(())
    }
}

/// `P^π(s, s') = Σ_a P(s'|s,a) π(a|s)`.
pub fn induced_kernel<T: Scalar>(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>) -> Result<Matrix<T>> {
    policy.check_model(model)?;
    let n = model.n_states();
    let mut kernel = Matrix::zeros(n, n);
    for s in 0..n {
        let pi = policy.action_distribution(s);
        let row = kernel.row_mut(s);
        for (a, &p) in pi.iter().enumerate() {
            crate::scalar::axpy(p, model.next_dist(s, a), row);
        }
    }
    Ok(kernel)
}

/// Recurrent class and transient states of a unichain model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnichainStructure {
    pub recurrent: Vec<usize>,
    pub transient: Vec<usize>,
}

impl UnichainStructure {
    pub fn is_recurrent(&self, s: usize) -> bool {
        self.recurrent.binary_search(&s).is_ok()
    }

    pub fn n_states(&self) -> usize {
        self.recurrent.len() + self.transient.len()
    }
}

/// Closed strongly connected components of the graph with the given edge
/// relation, each sorted, in ascending order of their smallest state.
pub fn closed_classes(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for s in 0..n {
        for t in 0..n {
            if edge(s, t) {
                graph.add_edge(nodes[s], nodes[t], ());
            }
        }
    }
    let mut comp = vec![0usize; n];
    let sccs = tarjan_scc(&graph);
    for (c, members) in sccs.iter().enumerate() {
        for node in members {
            comp[node.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|u| {
                (0..n).all(|t| !edge(u.index(), t) || comp[t] == *c)
            })
        })
        .map(|(_, members)| {
            let mut v: Vec<usize> = members.iter().map(|u| u.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    closed.sort();
    closed
}

/// Recurrent class of every full-support policy, from the union support
/// graph (`s → s'` iff `P(s'|s,a) > 0` for some `a`).
pub fn validate_unichain<T: Scalar>(model: &CmdpModel<T>) -> Result<UnichainStructure> {
    let n = model.n_states();
    let m = model.n_actions();
    let classes = closed_classes(n, |s, t| (0..m).any(|a| model.next_dist(s, a)[t] > T::zero()));
    if classes.len() != 1 {
        return Err(Error::MultipleRecurrentClasses {
            count: classes.len(),
        });
    }
    let recurrent = classes.into_iter().next().unwrap();
    let transient = (0..n).filter(|s| recurrent.binary_search(s).is_err()).collect();
    Ok(UnichainStructure {
        recurrent,
        transient,
    })
}

/// Closed classes of the chain induced by a specific kernel.
pub fn kernel_closed_classes<T: Scalar>(kernel: &Matrix<T>) -> Vec<Vec<usize>> {
    closed_classes(kernel.rows(), |s, t| kernel[(s, t)] > T::zero())
}

/// Period of the recurrent class: gcd over in-class edges `u → v` of
/// `level(u) + 1 − level(v)`, with BFS levels from the first state.
pub fn recurrent_period<T: Scalar>(model: &CmdpModel<T>, structure: &UnichainStructure) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    let n = model.n_states();
    let m = model.n_actions();
    let edge = |s: usize, t: usize| (0..m).any(|a| model.next_dist(s, a)[t] > T::zero());
    let mut level: Vec<Option<usize>> = vec![None; n];
    let root = structure.recurrent[0];
    level[root] = Some(0);
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for (v, lv) in level.iter_mut().enumerate() {
            if lv.is_none() && edge(u, v) {
                *lv = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    let mut period = 0;
    for &u in &structure.recurrent {
        for &v in &structure.recurrent {
            if edge(u, v) {
                let (lu, lv) = (level[u].unwrap() as i64, level[v].unwrap() as i64);
                period = gcd(period, (lu + 1 - lv).unsigned_abs() as usize);
            }
        }
    }
    period
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_ring() -> CmdpModel<f64> {
        CmdpModel::from_file(ModelFile {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            reward: vec![vec![0.0], vec![1.0]],
            cost: vec![vec![0.0], vec![0.0]],
            initial_dist: vec![1.0, 0.0],
        })
        .unwrap()
    }

    fn identity_chain() -> CmdpModel<f64> {
        CmdpModel::from_file(ModelFile {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            reward: vec![vec![0.0], vec![1.0]],
            cost: vec![vec![0.0], vec![0.0]],
            initial_dist: vec![0.5, 0.5],
        })
        .unwrap()
    }

    fn split_actions() -> CmdpModel<f64> {
        // a0 always goes to state 0, a1 always to state 1.
        CmdpModel::from_file(ModelFile {
            n_states: 2,
            n_actions: 2,
            transition: vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
            reward: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            cost: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            initial_dist: vec![1.0, 0.0],
        })
        .unwrap()
    }

    #[test]
    fn kernel_of_two_ring_is_the_swap() {
        let m = two_ring();
        let k = induced_kernel(&m, &SoftmaxPolicy::new(2, 1, vec![0.3, -2.0]).unwrap()).unwrap();
        assert_eq!(k.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn kernel_of_single_self_loop_is_identity() {
        let m = CmdpModel::from_file(ModelFile {
            n_states: 1,
            n_actions: 2,
            transition: vec![vec![vec![1.0], vec![1.0]]],
            reward: vec![vec![1.0, 0.0]],
            cost: vec![vec![-1.0, 1.0]],
            initial_dist: vec![1.0],
        })
        .unwrap();
        let k = induced_kernel(&m, &SoftmaxPolicy::new(1, 2, vec![4.0, 0.0]).unwrap()).unwrap();
        assert_eq!(k.to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn kernel_averages_action_rows() {
        let k = induced_kernel(&split_actions(), &SoftmaxPolicy::uniform(2, 2)).unwrap();
        for s in 0..2 {
            assert_abs_diff_eq!(k[(s, 0)], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(k[(s, 1)], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn kernel_rejects_mismatched_policy() {
        let err = induced_kernel(&two_ring(), &SoftmaxPolicy::uniform(3, 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn action_distribution_examples() {
        let p = SoftmaxPolicy::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(p.action_distribution(0), vec![0.5, 0.5]);
        let p = SoftmaxPolicy::new(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let d = p.action_distribution(0);
        assert_abs_diff_eq!(d[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.25, epsilon = 1e-15);
        let p = SoftmaxPolicy::new(1, 2, vec![123.4, 123.4]).unwrap();
        assert_eq!(p.action_distribution(0), vec![0.5, 0.5]);
    }

    #[test]
    fn score_examples() {
        let p = SoftmaxPolicy::<f64>::uniform(2, 2);
        assert_eq!(p.score(1, 0), vec![0.0, 0.0, 0.5, -0.5]);
        let p = SoftmaxPolicy::new(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let s = p.score(0, 0);
        assert_abs_diff_eq!(s[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn temperature_scales_policy_and_score() {
        let p = SoftmaxPolicy::new(1, 2, vec![2f64.ln(), 0.0])
            .unwrap()
            .with_temperature(0.5)
            .unwrap();
        let d = p.action_distribution(0);
        assert_abs_diff_eq!(d[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(p.score(0, 1)[1], (1.0 - 0.2) / 0.5, epsilon = 1e-14);
        assert!(SoftmaxPolicy::<f64>::uniform(1, 2).with_temperature(0.0).is_err());
    }

    #[test]
    fn unichain_examples() {
        let s = validate_unichain(&two_ring()).unwrap();
        assert_eq!(s.recurrent, vec![0, 1]);
        assert!(s.transient.is_empty());

        let funnel = CmdpModel::from_file(ModelFile {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![0.5, 0.5]], vec![vec![0.0, 1.0]]],
            reward: vec![vec![0.0], vec![1.0]],
            cost: vec![vec![0.0], vec![0.0]],
            initial_dist: vec![1.0, 0.0],
        })
        .unwrap();
        let s = validate_unichain(&funnel).unwrap();
        assert_eq!(s.recurrent, vec![1]);
        assert_eq!(s.transient, vec![0]);

        assert!(matches!(
            validate_unichain(&identity_chain()),
            Err(Error::MultipleRecurrentClasses { count: 2 })
        ));
    }

    #[test]
    fn period_of_two_ring() {
        let m = two_ring();
        assert_eq!(recurrent_period(&m, &validate_unichain(&m).unwrap()), 2);
    }

    #[test]
    fn rejects_bad_rows_and_ranges() {
        let mut f = two_ring().to_file();
        f.transition[0][0] = vec![0.4, 0.5];
        assert!(CmdpModel::from_file(f).is_err());
        let mut f = two_ring().to_file();
        f.reward[0][0] = 1.5;
        assert!(CmdpModel::from_file(f).is_err());
        let mut f = two_ring().to_file();
        f.cost[0][0] = -1.5;
        assert!(CmdpModel::from_file(f).is_err());
        let mut f = two_ring().to_file();
        f.initial_dist = vec![0.7, 0.7];
        assert!(CmdpModel::from_file(f).is_err());
        let mut f = two_ring().to_file();
        f.transition[1][0] = vec![-0.5, 1.5];
        assert!(CmdpModel::from_file(f).is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let m = two_ring();
        let back = CmdpModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"n_states":1,"n_actions":1,"transition":[[[1.0]]],"reward":[[0.0]],
                      "cost":[[0.0]],"initial_dist":[1.0],"extra":1}"#;
        assert!(CmdpModel::<f64>::from_json(bad).is_err());
    }

    #[test]
    fn features_enforce_unit_norm() {
        assert!(FeatureMap::new(Signal::Reward, vec![vec![0.8, 0.7]]).is_err());
        let f = FeatureMap::new(Signal::Cost, vec![vec![0.6, 0.8]]).unwrap();
        assert_eq!(f.dimension(), 2);
        let oh = FeatureMap::<f64>::one_hot(3, Signal::Reward);
        assert_eq!(oh.phi(2), &[0.0, 0.0, 1.0]);
    }
}
