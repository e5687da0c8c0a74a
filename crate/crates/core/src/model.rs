//! Ising models, benchmark topologies and brute-force equilibrium oracles.
//!
//! Couplings live on unordered pairs `(i, j)` with `i < j`; the adjacency
//! list is derived once at construction and used by every local-field
//! evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::SpinConfiguration;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Largest `n` accepted by the exhaustive oracles.
pub const ENUMERATION_LIMIT: usize = 24;

/// Pairwise binary model with couplings `J` and fields `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    n: usize,
    couplings: BTreeMap<(usize, usize), f64>,
    fields: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl IsingModel {
    /// Build a model from an edge list. Pairs may be given in either order;
    /// exact zeros are dropped. Self-loops, duplicates and non-finite values
    /// are rejected.
    pub fn new<I>(n: usize, edges: I, fields: Vec<f64>) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if fields.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: fields.len() });
        }
        if let Some(h) = fields.iter().find(|h| !h.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite field {h}")));
        }
        let mut couplings = BTreeMap::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), n });
            }
            if i == j {
                return Err(Error::InvalidModel(format!("self-loop at node {i}")));
            }
            if !w.is_finite() {
                return Err(Error::InvalidModel(format!("non-finite coupling on ({i}, {j})")));
            }
            let key = (i.min(j), i.max(j));
            if couplings.contains_key(&key) {
                return Err(Error::InvalidModel(format!("duplicate edge ({}, {})", key.0, key.1)));
            }
            if w != 0.0 {
                couplings.insert(key, w);
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for (&(i, j), &w) in &couplings {
            neighbors[i].push((j, w));
            neighbors[j].push((i, w));
        }
        Ok(Self { n, couplings, fields, neighbors })
    }

    /// Zero-field model.
    pub fn with_zero_field<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        Self::new(n, edges, vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn couplings(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.couplings
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.couplings.keys().copied().collect()
    }

    pub fn num_edges(&self) -> usize {
        self.couplings.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// `Σ_{j∈∂i} J_ij σ_j + H_i`.
    #[inline]
    pub fn local_field(&self, i: usize, sigma: &[i8]) -> f64 {
        self.neighbors[i].iter().fold(self.fields[i], |acc, &(j, w)| acc + w * f64::from(sigma[j]))
    }

    /// Exponent of the Gibbs weight, `Σ_E J_ij σ_i σ_j + Σ_i H_i σ_i`.
    pub fn energy(&self, sigma: &[i8]) -> f64 {
        let pair: f64 = self.couplings.iter().map(|(&(i, j), &w)| w * f64::from(sigma[i] * sigma[j])).sum();
        let field: f64 = self.fields.iter().zip(sigma).map(|(h, &s)| h * f64::from(s)).sum();
        pair + field
    }

    /// The same model with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: perm.len() });
        }
        let mut fields = vec![0.0; self.n];
        for (i, &p) in perm.iter().enumerate() {
            fields[p] = self.fields[i];
        }
        Self::new(self.n, self.couplings.iter().map(|(&(i, j), &w)| (perm[i], perm[j], w)), fields)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form: `{"n", "edges": [[i, j, J], ...], "fields": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub fields: Vec<f64>,
}

impl From<&IsingModel> for ModelFile {
    fn from(m: &IsingModel) -> Self {
        Self { n: m.n, edges: m.couplings.iter().map(|(&(i, j), &w)| (i, j, w)).collect(), fields: m.fields.clone() }
    }
}

impl TryFrom<ModelFile> for IsingModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if let Some(&(i, j, _)) = f.edges.iter().find(|(i, j, _)| i >= j) {
            return Err(Error::InvalidModel(format!("edge [{i}, {j}] violates i < j")));
        }
        IsingModel::new(f.n, f.edges, f.fields)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    /// Smallest nonzero coupling magnitude.
    pub alpha: f64,
    /// Largest coupling magnitude.
    pub beta: f64,
    /// Maximum node degree.
    pub d: usize,
}

pub fn model_stats(model: &IsingModel) -> Result<ModelStats> {
    if model.couplings.is_empty() {
        return Err(Error::EdgelessModel);
    }
    let (alpha, beta) =
        model.couplings.values().fold((f64::INFINITY, 0.0f64), |(lo, hi), w| (lo.min(w.abs()), hi.max(w.abs())));
    let d = (0..model.n).map(|i| model.degree(i)).max().unwrap_or(0);
    Ok(ModelStats { alpha, beta, d })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    PeriodicLattice { rows: usize, cols: usize },
    RandomRegular { n: usize, degree: usize, seed: u64 },
}

impl GraphKind {
    pub fn n(&self) -> usize {
        match *self {
            GraphKind::PeriodicLattice { rows, cols } => rows * cols,
            GraphKind::RandomRegular { n, .. } => n,
        }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, GraphKind::PeriodicLattice { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CouplingPattern {
    Ferromagnetic,
    SpinGlass { seed: u64 },
    FerroWithImpurity,
}

/// Recipe for one of the benchmark models.
///
/// Edges in `impurity_edges` get magnitude `alpha_value` and every other
/// edge gets `beta_value`. The sign is `+` for ferromagnets, `-` on the
/// impurity edges of `FerroWithImpurity`, and an independent fair coin per
/// edge for spin glasses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub graph: GraphKind,
    pub pattern: CouplingPattern,
    pub beta_value: f64,
    pub alpha_value: f64,
    #[serde(default)]
    pub impurity_edges: Vec<(usize, usize)>,
}

impl TopologySpec {
    /// Benchmark defaults: one weak edge placed at the first edge of the
    /// generated graph, i.e. `(0, 1)` on lattices.
    pub fn benchmark(graph: GraphKind, pattern: CouplingPattern, beta: f64, alpha: f64) -> Result<Self> {
        let edges = graph_edges(&graph)?;
        Ok(Self {
            graph,
            pattern,
            beta_value: beta,
            alpha_value: alpha,
            impurity_edges: edges.into_iter().take(1).collect(),
        })
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta_value: beta, ..self.clone() }
    }
}

/// Edge list of the underlying graph, sorted, with `i < j`.
pub fn graph_edges(kind: &GraphKind) -> Result<Vec<(usize, usize)>> {
    match *kind {
        GraphKind::PeriodicLattice { rows, cols } => {
            if rows < 3 || cols < 3 {
                return Err(Error::InvalidTopology(format!(
                    "periodic lattice needs rows, cols >= 3, got {rows}x{cols}"
                )));
            }
            let idx = |r: usize, c: usize| (r % rows) * cols + (c % cols);
            let mut edges = BTreeSet::new();
            for r in 0..rows {
                for c in 0..cols {
                    let a = idx(r, c);
                    for b in [idx(r, c + 1), idx(r + 1, c)] {
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
            }
            Ok(edges.into_iter().collect())
        }
        GraphKind::RandomRegular { n, degree, seed } => random_regular_edges(n, degree, seed),
    }
}

/// Configuration model: pair up `n * degree` stubs uniformly and reject the
/// whole pairing on any self-loop or multi-edge.
fn random_regular_edges(n: usize, degree: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if degree == 0 || degree >= n {
        return Err(Error::InvalidTopology(format!("degree {degree} invalid for n = {n}")));
    }
    if !(n * degree).is_multiple_of(2) {
        return Err(Error::InvalidTopology(format!("n * degree = {} must be even", n * degree)));
    }
    const MAX_ATTEMPTS: usize = 100_000;
    let mut rng = rng::stream(seed, Purpose::Topology, &[n as u64, degree as u64]);
    let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, degree)).collect();
    'attempt: for _ in 0..MAX_ATTEMPTS {
        stubs.shuffle(&mut rng);
        let mut edges = BTreeSet::new();
        for pair in stubs.chunks(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !edges.insert((a, b)) {
                continue 'attempt;
            }
        }
        return Ok(edges.into_iter().collect());
    }
    Err(Error::InvalidTopology(format!("no simple {degree}-regular graph on {n} nodes after {MAX_ATTEMPTS} attempts")))
}

pub fn build_topology(spec: &TopologySpec) -> Result<IsingModel> {
    if !(spec.beta_value > 0.0 && spec.beta_value.is_finite()) {
        return Err(Error::InvalidTopology(format!("beta_value must be positive, got {}", spec.beta_value)));
    }
    if !(spec.alpha_value > 0.0 && spec.alpha_value.is_finite()) {
        return Err(Error::InvalidTopology(format!("alpha_value must be positive, got {}", spec.alpha_value)));
    }
    let n = spec.graph.n();
    let edges = graph_edges(&spec.graph)?;
    let edge_lookup: BTreeSet<_> = edges.iter().copied().collect();
    let mut weak = BTreeSet::new();
    for &(i, j) in &spec.impurity_edges {
        let key = (i.min(j), i.max(j));
        if !edge_lookup.contains(&key) {
            return Err(Error::InvalidTopology(format!("impurity edge ({i}, {j}) is not in the graph")));
        }
        weak.insert(key);
    }
    let mut sign_rng = match spec.pattern {
        CouplingPattern::SpinGlass { seed } => Some(rng::stream(seed, Purpose::Topology, &[n as u64, 0x5167])),
        _ => None,
    };
    let couplings = edges.iter().map(|&e| {
        let is_weak = weak.contains(&e);
        let magnitude = if is_weak { spec.alpha_value } else { spec.beta_value };
        let sign = match spec.pattern {
            CouplingPattern::Ferromagnetic => 1.0,
            CouplingPattern::FerroWithImpurity => {
                if is_weak {
                    -1.0
                } else {
                    1.0
                }
            }
            CouplingPattern::SpinGlass { .. } => {
                let rng = sign_rng.as_mut().expect("spin glass rng");
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        (e.0, e.1, sign * magnitude)
    });
    IsingModel::with_zero_field(n, couplings.collect::<Vec<_>>())
}

/// Unnormalized Gibbs weight `exp(energy)`.
pub fn gibbs_weight(model: &IsingModel, sigma: &SpinConfiguration) -> Result<f64> {
    check_len(model.n, sigma.len())?;
    Ok(model.energy(sigma.as_slice()).exp())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Configuration number `index` in the enumeration order used by the
/// exhaustive oracles: bit `i` set means `σ_i = +1`.
pub fn config_from_index(index: u64, n: usize) -> SpinConfiguration {
    SpinConfiguration::from_vec_unchecked((0..n).map(|i| if index >> i & 1 == 1 { 1 } else { -1 }).collect())
}

/// Visit all `2^n` configurations in Gray-code order with their energies.
fn for_each_energy(model: &IsingModel, mut f: impl FnMut(&[i8], f64)) {
    let n = model.n;
    let mut sigma = vec![-1i8; n];
    let mut e = model.energy(&sigma);
    f(&sigma, e);
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        // Flipping σ_i changes the energy by -2 σ_i h_i.
        e -= 2.0 * f64::from(sigma[i]) * model.local_field(i, &sigma);
        sigma[i] = -sigma[i];
        f(&sigma, e);
    }
}

/// `ln Z` by exhaustive enumeration (`n ≤ 24`).
pub fn exact_log_partition_function(model: &IsingModel) -> Result<f64> {
    if model.n > ENUMERATION_LIMIT {
        return Err(Error::TooLargeForEnumeration { n: model.n, limit: ENUMERATION_LIMIT });
    }
    let mut max_e = f64::NEG_INFINITY;
    for_each_energy(model, |_, e| max_e = max_e.max(e));
    let mut acc = 0.0;
    for_each_energy(model, |_, e| acc += (e - max_e).exp());
    Ok(max_e + acc.ln())
}

/// Partition function `Z = Σ_σ exp(energy(σ))` by exhaustive enumeration.
pub fn exact_partition_function(model: &IsingModel) -> Result<f64> {
    exact_log_partition_function(model).map(f64::exp)
}

/// Exact equilibrium probabilities indexed as in [`config_from_index`].
pub fn exact_distribution(model: &IsingModel) -> Result<Vec<f64>> {
    let log_z = exact_log_partition_function(model)?;
    let n = model.n;
    Ok((0..1u64 << n).map(|idx| (model.energy(config_from_index(idx, n).as_slice()) - log_z).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lattice(rows: usize, cols: usize) -> GraphKind {
        GraphKind::PeriodicLattice { rows, cols }
    }

    #[test]
    fn ferromagnetic_torus_4x4() {
        let spec = TopologySpec {
            graph: lattice(4, 4),
            pattern: CouplingPattern::Ferromagnetic,
            beta_value: 0.4,
            alpha_value: 0.4,
            impurity_edges: vec![],
        };
        let m = build_topology(&spec).unwrap();
        assert_eq!(m.n(), 16);
        assert_eq!(m.num_edges(), 32);
        assert!(m.couplings().values().all(|&w| w == 0.4));
        assert_eq!(model_stats(&m).unwrap().d, 4);
        assert!(m.fields().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn impurity_lattice_has_one_negative_alpha() {
        let spec = TopologySpec::benchmark(lattice(4, 4), CouplingPattern::FerroWithImpurity, 1.0, 0.4).unwrap();
        let m = build_topology(&spec).unwrap();
        let neg: Vec<_> = m.couplings().values().filter(|&&w| w == -0.4).collect();
        let strong = m.couplings().values().filter(|&&w| w == 1.0).count();
        assert_eq!(neg.len(), 1);
        assert_eq!(strong, 31);
        assert_eq!(m.coupling(0, 1), -0.4);
    }

    #[test]
    fn random_regular_degrees() {
        for seed in 0..5 {
            let spec = TopologySpec::benchmark(
                GraphKind::RandomRegular { n: 16, degree: 3, seed },
                CouplingPattern::SpinGlass { seed: seed + 100 },
                1.0,
                0.4,
            )
            .unwrap();
            let m = build_topology(&spec).unwrap();
            assert!((0..16).all(|i| m.degree(i) == 3));
            assert_eq!(model_stats(&m).unwrap().d, 3);
            assert!(m.couplings().values().all(|w| w.abs() == 1.0 || w.abs() == 0.4));
        }
    }

    #[test]
    fn build_is_deterministic() {
        let spec = TopologySpec::benchmark(
            GraphKind::RandomRegular { n: 20, degree: 3, seed: 9 },
            CouplingPattern::SpinGlass { seed: 4 },
            1.5,
            0.4,
        )
        .unwrap();
        assert_eq!(build_topology(&spec).unwrap(), build_topology(&spec).unwrap());
    }

    #[test]
    fn topology_errors() {
        let odd = GraphKind::RandomRegular { n: 5, degree: 3, seed: 0 };
        assert!(matches!(graph_edges(&odd), Err(Error::InvalidTopology(_))));
        assert!(graph_edges(&lattice(2, 4)).is_err());
        let spec = TopologySpec {
            graph: lattice(3, 3),
            pattern: CouplingPattern::FerroWithImpurity,
            beta_value: 1.0,
            alpha_value: 0.4,
            impurity_edges: vec![(0, 4)],
        };
        assert!(matches!(build_topology(&spec), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn stats_min_max_magnitude() {
        let m = IsingModel::with_zero_field(4, vec![(0, 1, 0.4), (1, 2, -1.5), (2, 3, 0.7)]).unwrap();
        let s = model_stats(&m).unwrap();
        assert_eq!(s.alpha, 0.4);
        assert_eq!(s.beta, 1.5);
        assert_eq!(s.d, 2);
        let empty = IsingModel::with_zero_field(3, vec![]).unwrap();
        assert!(matches!(model_stats(&empty), Err(Error::EdgelessModel)));
    }

    #[test]
    fn gibbs_weight_examples() {
        let free = IsingModel::with_zero_field(3, vec![]).unwrap();
        let s = SpinConfiguration::new(vec![1, -1, 1]).unwrap();
        assert_eq!(gibbs_weight(&free, &s).unwrap(), 1.0);

        let pair = IsingModel::with_zero_field(2, vec![(0, 1, 1.0)]).unwrap();
        let up = SpinConfiguration::new(vec![1, 1]).unwrap();
        assert_relative_eq!(gibbs_weight(&pair, &up).unwrap(), std::f64::consts::E, max_relative = 1e-15);
        assert!(gibbs_weight(&pair, &SpinConfiguration::new(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn partition_function_small_cases() {
        let one = IsingModel::with_zero_field(1, vec![]).unwrap();
        assert_relative_eq!(exact_partition_function(&one).unwrap(), 2.0, max_relative = 1e-14);

        let j = 0.7;
        let pair = IsingModel::with_zero_field(2, vec![(0, 1, j)]).unwrap();
        let brute = 2.0 * f64::exp(j) + 2.0 * f64::exp(-j);
        assert_relative_eq!(exact_partition_function(&pair).unwrap(), brute, max_relative = 1e-14);

        let tri = IsingModel::new(3, vec![(0, 1, 0.3), (1, 2, -0.8), (0, 2, 1.1)], vec![0.2, -0.5, 0.1]).unwrap();
        let sum: f64 = (0..8).map(|k| gibbs_weight(&tri, &config_from_index(k, 3)).unwrap()).sum();
        assert_relative_eq!(exact_partition_function(&tri).unwrap(), sum, max_relative = 1e-13);

        let big = IsingModel::with_zero_field(25, vec![]).unwrap();
        assert!(matches!(exact_partition_function(&big), Err(Error::TooLargeForEnumeration { .. })));
    }

    #[test]
    fn json_round_trip_and_order_check() {
        let m = IsingModel::new(3, vec![(2, 0, 0.5), (1, 2, -0.25)], vec![0.0, 0.1, 0.0]).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(text, r#"{"n":3,"edges":[[0,2,0.5],[1,2,-0.25]],"fields":[0.0,0.1,0.0]}"#);
        let back = IsingModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        let bad = r#"{"n":3,"edges":[[2,0,0.5]],"fields":[0,0,0]}"#;
        assert!(IsingModel::from_json(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_model() -> impl Strategy<Value = IsingModel> {
            (2usize..=8).prop_flat_map(|n| {
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
                let np = pairs.len();
                (
                    proptest::collection::vec(prop_oneof![Just(0.0), -1.5f64..1.5], np),
                    proptest::collection::vec(-1.0f64..1.0, n),
                )
                    .prop_map(move |(ws, hs)| {
                        IsingModel::new(n, pairs.iter().zip(ws).map(|(&(i, j), w)| (i, j, w)), hs).unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn probabilities_sum_to_one(m in small_model()) {
                let p = exact_distribution(&m).unwrap();
                let total: f64 = p.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }

            #[test]
            fn zero_field_flip_symmetry(m in small_model()) {
                let m = IsingModel::with_zero_field(m.n(), m.couplings().iter().map(|(&(i, j), &w)| (i, j, w))).unwrap();
                let n = m.n();
                let p = exact_distribution(&m).unwrap();
                let mask = (1u64 << n) - 1;
                for idx in 0..(1u64 << n) {
                    let (a, b) = (p[idx as usize], p[(idx ^ mask) as usize]);
                    prop_assert!((a / b - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
