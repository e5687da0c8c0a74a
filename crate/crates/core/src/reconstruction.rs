//! From per-node estimates to an edge set.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::SampleSet;
use crate::error::{Error, Result};
use crate::estimators::{self, Estimator, NeighborhoodEstimate, RegularizationConfig, SolverConfig};
use crate::model::IsingModel;

/// Symmetric averaged couplings, one value per unordered pair `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrixEstimate {
    pub n: usize,
    pub values: BTreeMap<(usize, usize), f64>,
}

impl CouplingMatrixEstimate {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.values.get(&key).copied().unwrap_or(0.0)
    }

    /// Long-format rows `(i, j, value)` with `i < j`.
    pub fn to_rows(&self) -> Vec<(usize, usize, f64)> {
        self.values.iter().map(|(&(i, j), &v)| (i, j, v)).collect()
    }
}

/// Unordered pairs stored as `(i, j)` with `i < j`; serializes as a
/// sorted list of `[i, j]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeSetEstimate {
    pub edges: BTreeSet<(usize, usize)>,
}

impl EdgeSetEstimate {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&if i < j { (i, j) } else { (j, i) })
    }
}

impl FromIterator<(usize, usize)> for EdgeSetEstimate {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        Self { edges: iter.into_iter().map(|(i, j)| if i < j { (i, j) } else { (j, i) }).collect() }
    }
}

/// `Ĵ_ij^avg = (Ĵ_ij + Ĵ_ji) / 2`. Needs exactly one estimate per node.
pub fn average_couplings(estimates: &[NeighborhoodEstimate]) -> Result<CouplingMatrixEstimate> {
    let n = match estimates.first() {
        Some(e) => e.n(),
        None => return Err(Error::InvalidData("no neighborhood estimates".into())),
    };
    let mut by_node: Vec<Option<&NeighborhoodEstimate>> = vec![None; n];
    for e in estimates {
        if e.n() != n {
            return Err(Error::DimensionMismatch { expected: n - 1, got: e.couplings.len() });
        }
        if e.node >= n {
            return Err(Error::IndexOutOfRange { index: e.node, n });
        }
        if by_node[e.node].replace(e).is_some() {
            return Err(Error::InvalidData(format!("duplicate estimate for node {}", e.node)));
        }
    }
    if let Some(u) = by_node.iter().position(Option::is_none) {
        return Err(Error::InvalidData(format!("missing estimate for node {u}")));
    }
    let by_node: Vec<&NeighborhoodEstimate> = by_node.into_iter().flatten().collect();
    let mut values = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            values.insert((i, j), 0.5 * (by_node[i].coupling_to(j) + by_node[j].coupling_to(i)));
        }
    }
    Ok(CouplingMatrixEstimate { n, values })
}

/// Averaged couplings and fitted fields as a model; exact zeros are dropped.
pub fn model_from_estimates(estimates: &[NeighborhoodEstimate]) -> Result<IsingModel> {
    let avg = average_couplings(estimates)?;
    let mut fields = vec![0.0; avg.n];
    for e in estimates {
        fields[e.node] = e.field;
    }
    IsingModel::new(avg.n, avg.to_rows().into_iter().filter(|r| r.2 != 0.0), fields)
}

/// Pairs with `|Ĵ_ij^avg| ≥ α / 2`.
pub fn threshold_edges(est: &CouplingMatrixEstimate, alpha: f64) -> Result<EdgeSetEstimate> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    let cut = alpha / 2.0;
    Ok(est.values.iter().filter(|(_, v)| v.abs() >= cut).map(|(&k, _)| k).collect())
}

pub fn structure_success(est: &EdgeSetEstimate, truth: &IsingModel) -> bool {
    est.edges == truth.edge_set()
}

/// `e^{2βd/3} / (32 d α e^{d + 3β + 6}) · n ln n`, the single-trajectory
/// lower bound on the number of samples.
pub fn info_theoretic_lower_bound(beta: f64, d: f64, alpha: f64, n: f64) -> Result<f64> {
    if !(beta > 0.0 && d > 0.0 && alpha > 0.0 && n > 0.0) {
        return Err(Error::InvalidConfig("lower bound arguments must be positive".into()));
    }
    let log_prefactor = 2.0 * beta * d / 3.0 - (d + 3.0 * beta + 6.0);
    Ok(log_prefactor.exp() / (32.0 * d * alpha) * n * n.ln())
}

#[derive(Debug, Clone)]
pub struct StructureFit {
    pub edges: EdgeSetEstimate,
    pub couplings: CouplingMatrixEstimate,
    pub estimates: Vec<NeighborhoodEstimate>,
    pub lambdas: Vec<f64>,
}

/// Fit every node, average and threshold at `α / 2`.
pub fn learn_structure(
    samples: &SampleSet,
    reg: &RegularizationConfig,
    solver: &SolverConfig,
    alpha: f64,
    estimator: Estimator,
) -> Result<StructureFit> {
    reg.validate()?;
    solver.validate()?;
    let n = samples.n();
    if let Some(u) = samples.per_node_counts().iter().position(|&c| c == 0) {
        return Err(Error::NoUpdates { node: u });
    }
    let lambdas = (0..n).map(|u| estimators::lambda_for_node(reg, samples, u)).collect::<Result<Vec<_>>>()?;
    let estimates = (0..n)
        .into_par_iter()
        .map(|u| estimators::fit(estimator, samples, u, lambdas[u], solver))
        .collect::<Result<Vec<_>>>()?;
    let couplings = average_couplings(&estimates)?;
    let edges = threshold_edges(&couplings, alpha)?;
    Ok(StructureFit { edges, couplings, estimates, lambdas })
}
