//! D-RISE and D-RPLE: ℓ1-regularized neighborhood estimators.
//!
//! For a node `u` both estimators minimize a convex loss over
//! `x = (J_u, H_u)` plus `λ ‖J_u‖₁`; the field is never penalized.

pub mod cd;
mod design;
pub mod objective;
mod prox;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Regime, SampleSet};
use crate::error::{Error, Result};

pub use cd::{cd_coordinate_minimum, cd_coordinate_minimum_clamped, DEFAULT_CD_CLAMP};
pub use design::{NodeDesign, EXP_CLAMP};
pub use objective::{d_iso_gradient, d_iso_value, d_pl_gradient, d_pl_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[serde(alias = "d-rise", alias = "DRISE")]
    DRise,
    #[serde(alias = "d-rple", alias = "DRPLE")]
    DRple,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::DRise => "drise",
            Estimator::DRple => "drple",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "drise" => Ok(Estimator::DRise),
            "drple" => Ok(Estimator::DRple),
            _ => Err(Error::InvalidConfig(format!("unknown estimator {s:?}"))),
        }
    }
}

/// Fitted `(Ĵ_u, Ĥ_u)` for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodEstimate {
    #[serde(rename = "u")]
    pub node: usize,
    /// Indexed by `j ≠ u` in increasing order.
    #[serde(rename = "J")]
    pub couplings: Vec<f64>,
    #[serde(rename = "H")]
    pub field: f64,
    #[serde(rename = "objective")]
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub kkt_residual: f64,
    #[serde(skip)]
    pub clamp_events: u64,
}

impl NeighborhoodEstimate {
    /// `Ĵ_uj`; zero for `j == u`.
    pub fn coupling_to(&self, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match j.cmp(&self.node) {
            Less => self.couplings[j],
            Equal => 0.0,
            Greater => self.couplings[j - 1],
        }
    }

    pub fn n(&self) -> usize {
        self.couplings.len() + 1
    }
}

/// How `m_u` enters the regularization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaCount {
    /// The node's own update count `m_u`.
    #[default]
    PerNode,
    /// The mean count `m / n`, shared by all nodes.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub c_lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub count: LambdaCount,
}

fn default_delta() -> f64 {
    0.05
}

impl RegularizationConfig {
    pub fn new(c_lambda: f64) -> Self {
        Self { c_lambda, delta: default_delta(), count: LambdaCount::PerNode }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_lambda > 0.0) || !self.c_lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("c_lambda must be positive, got {}", self.c_lambda)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Optimal `c_λ` per graph family, regime and estimator.
pub fn default_c_lambda(lattice: bool, regime: Regime, estimator: Estimator) -> f64 {
    match (lattice, regime, estimator) {
        (true, _, Estimator::DRise) => 0.1,
        (true, _, Estimator::DRple) => 0.05,
        (false, Regime::T, Estimator::DRise) => 0.45,
        (false, Regime::T, Estimator::DRple) => 0.1,
        (false, Regime::M, Estimator::DRise) => 0.7,
        (false, Regime::M, Estimator::DRple) => 0.3,
    }
}

/// `λ = c_λ sqrt(ln(n² / δ') / m_u)` with `δ' = δ / n`.
pub fn lambda_value(config: &RegularizationConfig, n: usize, m_u: usize) -> Result<f64> {
    config.validate()?;
    if m_u == 0 {
        return Err(Error::InvalidData("lambda requested for a node with no updates".into()));
    }
    let n = n as f64;
    let delta_node = config.delta / n;
    Ok(config.c_lambda * ((n * n / delta_node).ln() / m_u as f64).sqrt())
}

/// The count used for node `u` under `config.count`.
pub fn lambda_for_node(config: &RegularizationConfig, samples: &SampleSet, u: usize) -> Result<f64> {
    let n = samples.n();
    let m_u = match config.count {
        LambdaCount::PerNode => samples.count(u),
        LambdaCount::Mean => (samples.len() / n.max(1)).max(1),
    };
    if samples.count(u) == 0 {
        return Err(Error::NoUpdates { node: u });
    }
    lambda_value(config, n, m_u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    CoordinateDescent,
    ProximalGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordinateOrder {
    /// Fresh permutation each sweep, from a stream keyed by `(seed, node)`.
    Random {
        seed: u64,
    },
    Cyclic,
}

impl Default for CoordinateOrder {
    fn default() -> Self {
        CoordinateOrder::Random { seed: 0 }
    }
}

/// Solver settings. `method` selects the D-RISE solver; D-RPLE always
/// uses proximal gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub cd_clamp: f64,
    pub order: CoordinateOrder,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::CoordinateDescent,
            tolerance: 1e-6,
            max_iterations: 100_000,
            cd_clamp: DEFAULT_CD_CLAMP,
            order: CoordinateOrder::default(),
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.cd_clamp > 0.0) {
            return Err(Error::InvalidConfig(format!("cd_clamp must be positive, got {}", self.cd_clamp)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome {
    pub x: Vec<f64>,
    /// Penalized objective at `x`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Penalized objective after every iteration, when requested.
    pub trace: Vec<f64>,
}

/// Subgradient optimality residual of `f(x) + λ Σ_{k<p-1} |x_k|`.
///
/// The last coordinate is the unpenalized field.
pub fn kkt_residual(x: &[f64], grad: &[f64], lambda: f64) -> f64 {
    let p = x.len();
    let mut r = grad[p - 1].abs();
    for k in 0..p - 1 {
        let term =
            if x[k] == 0.0 { (grad[k].abs() - lambda).max(0.0) } else { (grad[k] + lambda * x[k].signum()).abs() };
        r = r.max(term);
    }
    r
}

struct IsoLoss<'a>(&'a NodeDesign);
struct PlLoss<'a>(&'a NodeDesign);

impl prox::Smooth for IsoLoss<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iso_value(x)
    }
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.0.iso_value_grad(x, grad)
    }
}

impl prox::Smooth for PlLoss<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.pl_value(x)
    }
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.0.pl_value_grad(x, grad)
    }
}

fn prox_params(lambda: f64, solver: &SolverConfig) -> prox::ProxParams {
    prox::ProxParams {
        lambda,
        tolerance: solver.tolerance,
        max_iterations: solver.max_iterations,
        initial_step: 1.0,
        record_trace: solver.record_trace,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(())
}

fn into_estimate(design: &NodeDesign, out: SolverOutcome) -> NeighborhoodEstimate {
    let mut x = out.x;
    let field = x.pop().expect("design has a field coordinate");
    if !out.converged {
        log::warn!(
            "node {} did not converge in {} iterations (residual {:.3e})",
            design.node(),
            out.iterations,
            out.kkt_residual
        );
    }
    NeighborhoodEstimate {
        node: design.node(),
        couplings: x,
        field,
        objective_value: out.objective,
        iterations: out.iterations,
        converged: out.converged,
        kkt_residual: out.kkt_residual,
        clamp_events: design.clamp_events(),
    }
}

/// D-RISE on a prebuilt design. Returns the raw outcome, including the
/// objective trace when requested.
pub fn solve_drise(design: &NodeDesign, lambda: f64, solver: &SolverConfig) -> Result<SolverOutcome> {
    check_lambda(lambda)?;
    solver.validate()?;
    let x0 = vec![0.0; design.dim()];
    match solver.method {
        SolverMethod::CoordinateDescent => cd::minimize_iso(design, lambda, &x0, solver),
        SolverMethod::ProximalGradient => prox::minimize(&IsoLoss(design), &x0, prox_params(lambda, solver)),
    }
}

pub fn solve_drple(design: &NodeDesign, lambda: f64, solver: &SolverConfig) -> Result<SolverOutcome> {
    check_lambda(lambda)?;
    solver.validate()?;
    let x0 = vec![0.0; design.dim()];
    prox::minimize(&PlLoss(design), &x0, prox_params(lambda, solver))
}

pub fn fit_drise(samples: &SampleSet, u: usize, lambda: f64, solver: &SolverConfig) -> Result<NeighborhoodEstimate> {
    let design = NodeDesign::new(samples, u)?;
    let out = solve_drise(&design, lambda, solver)?;
    Ok(into_estimate(&design, out))
}

pub fn fit_drple(samples: &SampleSet, u: usize, lambda: f64, solver: &SolverConfig) -> Result<NeighborhoodEstimate> {
    let design = NodeDesign::new(samples, u)?;
    let out = solve_drple(&design, lambda, solver)?;
    Ok(into_estimate(&design, out))
}

pub fn fit(
    estimator: Estimator,
    samples: &SampleSet,
    u: usize,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<NeighborhoodEstimate> {
    match estimator {
        Estimator::DRise => fit_drise(samples, u, lambda, solver),
        Estimator::DRple => fit_drple(samples, u, lambda, solver),
    }
}
