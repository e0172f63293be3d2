//! Exact tabular computations used as ground truth for the stochastic
//! estimators.

mod chain;
mod critic;
mod lp;
mod policy;

pub use chain::{
    average_objective, cesaro_tv_check, cesaro_tv_series, hitting_constants, solve_poisson,
    stationary_distribution, PoissonSolution, PolicyChain, StationarySolution, UnichainConstants,
};
pub use critic::{critic_ground_truth, CriticGroundTruth, CriticSummary};
pub use lp::{flow_residual, solve_cmdp_lp, CmdpLpSolution, LinearProgram, LpOutcome};
pub use policy::{
    compat_error_exact, critic_gradient_exact, fisher_exact, npg_exact, npg_mean_gradient, npg_objective,
    policy_gradient_exact, FisherMatrix, NpgDirection,
};

pub(crate) use chain::{gain_of, hitting_of, poisson_of};
pub(crate) use critic::critic_of;
pub(crate) use policy::{critic_gradient_of, fisher_of};

use serde::Serialize;

use crate::error::Result;
use crate::model::{CmdpModel, FeatureMap, Signal, SoftmaxPolicy};
use crate::scalar::Scalar;

/// Relative singular-value threshold for every rank decision.
pub const KERNEL_REL_TOL: f64 = 1e-8;

/// Everything the `oracle` subcommand prints for one `(model, θ)` pair.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub stationary: Vec<f64>,
    pub recurrent: Vec<usize>,
    pub transient: Vec<usize>,
    pub j_r: f64,
    pub j_c: f64,
    pub v_r: Vec<f64>,
    pub v_c: Vec<f64>,
    pub c_hit: f64,
    pub c_tar: f64,
    pub lambda_subspace_r: Option<f64>,
    pub lambda_subspace_c: Option<f64>,
    pub lp: LpReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct LpReport {
    pub j_r_star: f64,
    pub j_c_star: f64,
    pub slater_delta: f64,
    pub occupancy: Vec<Vec<f64>>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Full oracle report with one-hot critic features and `c_γ = 1` for the
/// subspace constant (which does not depend on `c_γ`).
pub fn oracle_report<T: Scalar>(model: &CmdpModel<T>, policy: &SoftmaxPolicy<T>) -> Result<OracleReport> {
    policy.check_model(model)?;
    let chain = PolicyChain::new(model, policy)?;
    let pr = poisson_of(&chain, model, Signal::Reward)?;
    let pc = poisson_of(&chain, model, Signal::Cost)?;
    let hc = hitting_of(&chain)?;
    let n = model.n_states();
    let lam = |g| critic_of(&chain, model, &FeatureMap::one_hot(n, g), T::one(), g).lambda_subspace.map(Scalar::as_f64);
    let lp = solve_cmdp_lp(model)?;
    Ok(OracleReport {
        stationary: to_f64(chain.d()),
        recurrent: chain.structure.recurrent.clone(),
        transient: chain.structure.transient.clone(),
        j_r: pr.gain.as_f64(),
        j_c: pc.gain.as_f64(),
        v_r: to_f64(&pr.v),
        v_c: to_f64(&pc.v),
        c_hit: hc.c_hit.as_f64(),
        c_tar: hc.c_tar.as_f64(),
        lambda_subspace_r: lam(Signal::Reward),
        lambda_subspace_c: lam(Signal::Cost),
        lp: LpReport {
            j_r_star: lp.j_r_star.as_f64(),
            j_c_star: lp.j_c_star.as_f64(),
            slater_delta: lp.slater_delta.as_f64(),
            occupancy: lp.occupancy.to_rows().iter().map(|r| to_f64(r)).collect(),
        },
    })
}
