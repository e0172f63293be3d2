//! Primal-dual natural actor-critic with multi-level Monte Carlo estimators
//! and per-epoch burn-in for average-reward constrained MDPs with a single
//! recurrent class, plus exact tabular oracles for every quantity the
//! algorithm estimates.
//!
//! Everything numeric is generic over [`Scalar`] (`f64` or `f32`); the
//! aliases below fix `f64`, which is what the harness and CLI use.

pub mod driver;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod scalar;
pub mod zoo;

pub use error::{Error, Result};
pub use model::{CmdpModel, FeatureMap, Signal, SoftmaxPolicy, UnichainStructure};
pub use scalar::Scalar;
pub use zoo::EnvSpec;

pub type Model = CmdpModel<f64>;
pub type Policy = SoftmaxPolicy<f64>;
pub type Features = FeatureMap<f64>;
pub type Mat = linalg::Matrix<f64>;
