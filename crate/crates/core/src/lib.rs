//! Structure learning of Ising models from Glauber dynamics.
//!
//! Samples come from single-site Glauber updates, either along one
//! trajectory (T-regime) or as independent one-step runs (M-regime). The
//! neighborhood of each node is estimated by minimizing a regularized
//! dynamic interaction-screening (D-RISE) or pseudo-likelihood (D-RPLE)
//! objective.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
pub mod neural;
pub mod reconstruction;
pub mod rng;

pub use dynamics::{DynamicsSample, InitialDistribution, Regime, SampleSet, SpinConfiguration};
pub use error::{Error, Result};
pub use estimators::{Estimator, NeighborhoodEstimate, RegularizationConfig, SolverConfig};
pub use model::{IsingModel, ModelStats, TopologySpec};
