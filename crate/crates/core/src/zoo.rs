//! Canonical unichain CMDP fixtures and a seeded random-instance generator.
//!
//! Constraint thresholds are folded into the cost tables so that every
//! instance uses the `J_c ≥ 0` form.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_unichain, CmdpModel, ModelFile, SoftmaxPolicy};
use crate::oracle::{hitting_constants, solve_cmdp_lp};
use crate::scalar::Scalar;

const MAX_ATTEMPTS: usize = 1000;
const MIN_SLATER_MARGIN: f64 = 0.05;

/// Environment name plus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum EnvSpec {
    /// Deterministic 2-cycle, one action.
    TwoRing,
    /// Transient state 0 entering absorbing state 1 with probability `p`.
    TransientFunnel { p: f64 },
    /// One state, two actions with opposite costs.
    ConstrainedSelfLoop,
    /// Deterministic `k`-cycle, two actions.
    PeriodicRingK { k: usize },
    /// Transient state feeding a `k`-cycle with probability `p`.
    FunnelRing { p: f64, k: usize },
    /// Sparse random unichain model, rejection-sampled.
    RandomUnichain {
        n_states: usize,
        n_actions: usize,
        n_transient: usize,
        seed: u64,
    },
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::TwoRing => "TwoRing",
            EnvSpec::TransientFunnel { .. } => "TransientFunnel",
            EnvSpec::ConstrainedSelfLoop => "ConstrainedSelfLoop",
            EnvSpec::PeriodicRingK { .. } => "PeriodicRingK",
            EnvSpec::FunnelRing { .. } => "FunnelRing",
            EnvSpec::RandomUnichain { .. } => "RandomUnichain",
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<CmdpModel<T>> {
        let file = match *self {
            EnvSpec::TwoRing => two_ring(),
            EnvSpec::TransientFunnel { p } => transient_funnel(p)?,
            EnvSpec::ConstrainedSelfLoop => constrained_self_loop(),
            EnvSpec::PeriodicRingK { k } => funnel_ring(None, k)?,
            EnvSpec::FunnelRing { p, k } => funnel_ring(Some(p), k)?,
            EnvSpec::RandomUnichain {
                n_states,
                n_actions,
                n_transient,
                seed,
            } => random_unichain(n_states, n_actions, n_transient, seed)?,
        };
        let model = CmdpModel::from_file(convert(file))?;
        validate_unichain(&model)?;
        Ok(model)
    }

    /// Builds from a name and a JSON object of parameters (missing
    /// parameters take catalog defaults).
    pub fn from_name(name: &str, params: &serde_json::Value) -> Result<Self> {
        let default = catalog()
            .into_iter()
            .find(|e| e.spec.name() == name)
            .ok_or_else(|| Error::UnknownEnvironment(name.to_string()))?
            .spec;
        let mut value = serde_json::to_value(&default)?;
        if let (Some(obj), Some(extra)) = (value.as_object_mut(), params.as_object()) {
            for (k, v) in extra {
                // the defaults list every parameter, so anything else is a typo
                if !obj.contains_key(k) || k == "name" {
                    return Err(Error::Config(format!("{name} has no parameter `{k}`")));
                }
                obj.insert(k.clone(), v.clone());
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    /// `{"name": ..., params...}` with every key checked, which the derived
    /// tagged deserializer does not do for struct variants.
    pub fn from_value(value: &serde_json::Value) -> Result<Self> {
        let mut obj = value
            .as_object()
            .cloned()
            .ok_or_else(|| Error::Config("environment must be a table".into()))?;
        let name = match obj.remove("name") {
            Some(serde_json::Value::String(n)) => n,
            _ => return Err(Error::Config("environment needs a string `name`".into())),
        };
        Self::from_name(&name, &serde_json::Value::Object(obj))
    }
}

/// `deserialize_with` helper applying [`EnvSpec::from_value`].
pub fn deserialize_strict<'de, D>(d: D) -> std::result::Result<Option<EnvSpec>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let v = Option::<serde_json::Value>::deserialize(d)?;
    v.map(|v| EnvSpec::from_value(&v).map_err(serde::de::Error::custom))
        .transpose()
}

fn convert<T: Scalar>(f: ModelFile<f64>) -> ModelFile<T> {
    let c = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    ModelFile {
        n_states: f.n_states,
        n_actions: f.n_actions,
        transition: f
            .transition
            .into_iter()
            .map(|rows| rows.into_iter().map(c).collect())
            .collect(),
        reward: f.reward.into_iter().map(c).collect(),
        cost: f.cost.into_iter().map(c).collect(),
        initial_dist: c(f.initial_dist),
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn two_ring() -> ModelFile<f64> {
    ModelFile {
        n_states: 2,
        n_actions: 1,
        transition: vec![vec![unit(2, 1)], vec![unit(2, 0)]],
        reward: vec![vec![0.0], vec![1.0]],
        cost: vec![vec![0.5], vec![-0.25]],
        initial_dist: unit(2, 0),
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("entry probability p = {p} must lie in (0, 1]")));
    }
    Ok(())
}

fn transient_funnel(p: f64) -> Result<ModelFile<f64>> {
    check_p(p)?;
    Ok(ModelFile {
        n_states: 2,
        n_actions: 2,
        transition: vec![vec![vec![1.0 - p, p]; 2], vec![unit(2, 1); 2]],
        reward: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        cost: vec![vec![0.0, 0.0], vec![0.5, -0.5]],
        initial_dist: unit(2, 0),
    })
}

fn constrained_self_loop() -> ModelFile<f64> {
    ModelFile {
        n_states: 1,
        n_actions: 2,
        transition: vec![vec![vec![1.0], vec![1.0]]],
        reward: vec![vec![1.0, 0.0]],
        cost: vec![vec![-1.0, 1.0]],
        initial_dist: vec![1.0],
    }
}

/// Ring state `j` of a cycle: action 0 pays more reward and costs budget,
/// action 1 replenishes it. Odd ring positions trade off differently.
fn ring_tables(j: usize) -> (Vec<f64>, Vec<f64>) {
    let odd = (j % 2) as f64;
    (vec![1.0 - 0.2 * odd, 0.2 + 0.1 * odd], vec![-0.25, 0.5])
}

/// A `k`-cycle, optionally preceded by one transient funnel state.
fn funnel_ring(p: Option<f64>, k: usize) -> Result<ModelFile<f64>> {
    if k == 0 {
        return Err(Error::Config("ring length k must be at least 1".into()));
    }
    let offset = usize::from(p.is_some());
    let n = k + offset;
    let mut transition = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    let mut cost = Vec::with_capacity(n);
    if let Some(p) = p {
        check_p(p)?;
        let mut row = unit(n, 0);
        row[0] = 1.0 - p;
        row[1] += p;
        transition.push(vec![row; 2]);
        reward.push(vec![0.0, 0.0]);
        cost.push(vec![0.0, 0.0]);
    }
    for j in 0..k {
        let next = offset + (j + 1) % k;
        transition.push(vec![unit(n, next); 2]);
        let (r, c) = ring_tables(j);
        reward.push(r);
        cost.push(c);
    }
    Ok(ModelFile {
        n_states: n,
        n_actions: 2,
        transition,
        reward,
        cost,
        initial_dist: unit(n, 0),
    })
}

fn random_unichain(n: usize, m: usize, n_transient: usize, seed: u64) -> Result<ModelFile<f64>> {
    if n == 0 || m == 0 || n_transient >= n {
        return Err(Error::Config(format!(
            "RandomUnichain needs n_states > n_transient ≥ 0 and n_actions > 0 (got {n}, {m}, {n_transient})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recurrent: Vec<usize> = (n_transient..n).collect();
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_ATTEMPTS {
        let mut transition = Vec::with_capacity(n);
        for s in 0..n {
            let pool = if s < n_transient { &all } else { &recurrent };
            let rows = (0..m)
                .map(|_| {
                    let k = rng.gen_range(2..=3).min(pool.len());
                    let succ: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
                    let w: Vec<f64> = succ.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
                    let total: f64 = w.iter().sum();
                    let mut row = vec![0.0; n];
                    for (&t, &wi) in succ.iter().zip(&w) {
                        row[t] = wi / total;
                    }
                    row
                })
                .collect();
            transition.push(rows);
        }
        let reward = (0..n).map(|_| (0..m).map(|_| rng.gen::<f64>()).collect()).collect();
        let cost = (0..n).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut initial_dist = vec![0.0; n];
        initial_dist[0] = 1.0;
        let file = ModelFile {
            n_states: n,
            n_actions: m,
            transition,
            reward,
            cost,
            initial_dist,
        };
        let Ok(model) = CmdpModel::<f64>::from_file(file.clone()) else {
            continue;
        };
        let Ok(structure) = validate_unichain(&model) else {
            continue;
        };
        if structure.recurrent != recurrent {
            continue;
        }
        match solve_cmdp_lp(&model) {
            Ok(lp) if lp.slater_delta >= MIN_SLATER_MARGIN => return Ok(file),
            _ => continue,
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub spec: EnvSpec,
    pub phenomenon: &'static str,
}

/// Oracle facts about a catalog entry, computed on demand.
#[derive(Clone, Debug, Serialize)]
pub struct GroundTruth {
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub j_r_star: f64,
    pub slater_delta: f64,
    /// Under the uniform policy.
    pub c_hit: f64,
    pub c_tar: f64,
}

impl CatalogEntry {
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let model: CmdpModel<f64> = self.spec.build()?;
        let lp = solve_cmdp_lp(&model)?;
        let uniform = SoftmaxPolicy::uniform(model.n_states(), model.n_actions());
        let hc = hitting_constants(&model, &uniform)?;
        Ok(GroundTruth {
            name: self.spec.name().to_string(),
            n_states: model.n_states(),
            n_actions: model.n_actions(),
            j_r_star: lp.j_r_star,
            slater_delta: lp.slater_delta,
            c_hit: hc.c_hit,
            c_tar: hc.c_tar,
        })
    }
}

/// Stable, ordered list of the built-in environments with default
/// parameters.
pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            spec: EnvSpec::TwoRing,
            phenomenon: "periodic recurrent class, no transient states",
        },
        CatalogEntry {
            spec: EnvSpec::TransientFunnel { p: 0.5 },
            phenomenon: "transient prefix with geometric entry time (C_hit = 1/p)",
        },
        CatalogEntry {
            spec: EnvSpec::ConstrainedSelfLoop,
            phenomenon: "active constraint, optimum J_r* = 0.5 at the uniform policy",
        },
        CatalogEntry {
            spec: EnvSpec::PeriodicRingK { k: 4 },
            phenomenon: "period-k recurrent class with an action trade-off",
        },
        CatalogEntry {
            spec: EnvSpec::FunnelRing { p: 0.5, k: 3 },
            phenomenon: "transient entry into a periodic ring (C_hit > 0 and periodicity)",
        },
        CatalogEntry {
            spec: EnvSpec::RandomUnichain {
                n_states: 6,
                n_actions: 2,
                n_transient: 2,
                seed: 7,
            },
            phenomenon: "sparse random unichain model with transient states",
        },
    ]
}
