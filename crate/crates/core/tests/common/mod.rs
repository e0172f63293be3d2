#![allow(dead_code)]

use cmdp_lab::model::ModelFile;
use cmdp_lab::zoo::catalog;
use cmdp_lab::{EnvSpec, Model, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn zoo() -> Vec<(String, Model)> {
    catalog()
        .into_iter()
        .map(|e| (e.spec.name().to_string(), e.spec.build().unwrap()))
        .collect()
}

pub fn build(spec: EnvSpec) -> Model {
    spec.build().unwrap()
}

pub fn two_ring() -> Model {
    build(EnvSpec::TwoRing)
}

pub fn funnel(p: f64) -> Model {
    build(EnvSpec::TransientFunnel { p })
}

pub fn self_loop() -> Model {
    build(EnvSpec::ConstrainedSelfLoop)
}

pub fn uniform(model: &Model) -> Policy {
    Policy::uniform(model.n_states(), model.n_actions())
}

pub fn random_policies(model: &Model, n: usize, scale: f64, seed: u64) -> Vec<Policy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.n_states() * model.n_actions();
    (0..n)
        .map(|_| {
            let theta = (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect();
            Policy::for_model(model, theta).unwrap()
        })
        .collect()
}

/// Replaces one signal table by a constant.
pub fn constant_signal(model: &Model, g: cmdp_lab::Signal, value: f64) -> Model {
    model
        .with_signal(g, vec![vec![value; model.n_actions()]; model.n_states()])
        .unwrap()
}

/// Three-state ring where action 0 steps forward and action 1 steps back.
pub fn walk_ring() -> Model {
    let step = |s: usize, d: usize| {
        let mut row = vec![0.0; 3];
        row[(s + d) % 3] = 1.0;
        row
    };
    Model::from_file(ModelFile {
        n_states: 3,
        n_actions: 2,
        transition: (0..3).map(|s| vec![step(s, 1), step(s, 2)]).collect(),
        reward: vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]],
        cost: vec![vec![0.0, 0.0]; 3],
        initial_dist: vec![1.0, 0.0, 0.0],
    })
    .unwrap()
}

/// Three-sigma band for a Bernoulli frequency over `n` draws.
pub fn binomial_band(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}
