//! Entropy-guided query selection in the M-regime.
//!
//! Each round refits D-RISE on the samples gathered so far, weights every
//! initial configuration by the entropy of the next update under the
//! current estimate, mixes that with the uniform distribution and queries
//! the dynamics from a fresh mini-batch of initial configurations.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{glauber_update, Regime, SampleSet};
use crate::error::{Error, Result};
use crate::estimators::{self, NeighborhoodEstimate, RegularizationConfig, SolverConfig};
use crate::experiments::{find_m_star_with, MStarResult, MStarSpec};
use crate::model::{build_topology, config_from_index, model_stats, IsingModel};
use crate::reconstruction::{average_couplings, model_from_estimates, structure_success, threshold_edges};
use crate::rng::{self, Purpose};

/// Largest `n` for which the query distribution is enumerated.
pub const QUERY_ENUMERATION_LIMIT: usize = 20;

/// `ln(2 cosh a) - a tanh a`, the entropy in nats of a ±1 spin with
/// local field `a`.
#[inline]
pub fn spin_entropy(a: f64) -> f64 {
    let x = a.abs();
    let e = (-2.0 * x).exp();
    // Both terms are rewritten in e^{-2|a|} to stay accurate for large |a|.
    2.0 * x * e / (1.0 + e) + e.ln_1p()
}

/// Entropy of `σ¹` given `σ⁰`: `Σ_k ln(2 cosh A_k) - A_k tanh A_k` with
/// `A_k = Σ_l J_kl σ_l⁰ + H_k`.
pub fn glauber_entropy(model: &IsingModel, sigma0: &[i8]) -> Result<f64> {
    if sigma0.len() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), got: sigma0.len() });
    }
    Ok((0..model.n()).map(|k| spin_entropy(model.local_field(k, sigma0))).sum())
}

/// `μ = 1 - count^{-1/6}`.
pub fn mixing_coefficient(sample_count: usize) -> Result<f64> {
    if sample_count == 0 {
        return Err(Error::InvalidData("mixing coefficient needs at least one sample".into()));
    }
    // sqrt then cbrt keeps perfect sixth powers exact.
    Ok(1.0 - 1.0 / (sample_count as f64).sqrt().cbrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Probabilities over all `2^n` configurations, indexed as in
/// [`config_from_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDistribution {
    n: usize,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    entropy: EntropySummary,
}

impl QueryDistribution {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn entropy_summary(&self) -> EntropySummary {
        self.entropy
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty support");
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i8> {
        config_from_index(self.sample_index(rng) as u64, self.n).into_vec()
    }
}

/// Mix `q ∝ S` with the uniform distribution: `μ q + (1 - μ) / 2^n`.
/// Falls back to uniform when every entropy is zero.
pub fn build_query_distribution(model: &IsingModel, mu: f64) -> Result<QueryDistribution> {
    let n = model.n();
    if n > QUERY_ENUMERATION_LIMIT {
        return Err(Error::TooLargeForEnumeration { n, limit: QUERY_ENUMERATION_LIMIT });
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidConfig(format!("mixing coefficient must lie in [0, 1], got {mu}")));
    }
    let size = 1usize << n;
    let entropies: Vec<f64> = (0..size)
        .into_par_iter()
        .map_init(
            || vec![0i8; n],
            |sigma, idx| {
                for (k, s) in sigma.iter_mut().enumerate() {
                    *s = if idx >> k & 1 == 1 { 1 } else { -1 };
                }
                (0..n).map(|k| spin_entropy(model.local_field(k, sigma))).sum::<f64>()
            },
        )
        .collect();
    query_distribution_from_entropies(n, &entropies, mu)
}

/// `q` from per-configuration entropies (indexed as in
/// [`config_from_index`]).
pub fn query_distribution_from_entropies(n: usize, entropies: &[f64], mu: f64) -> Result<QueryDistribution> {
    let size = 1usize << n;
    if entropies.len() != size {
        return Err(Error::DimensionMismatch { expected: size, got: entropies.len() });
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidConfig(format!("mixing coefficient must lie in [0, 1], got {mu}")));
    }
    if let Some(s) = entropies.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("entropy {s} is not a finite nonnegative number")));
    }
    let total: f64 = entropies.iter().sum();
    let uniform = 1.0 / size as f64;
    let probs: Vec<f64> = if total > 0.0 {
        entropies.iter().map(|s| mu * s / total + (1.0 - mu) * uniform).collect()
    } else {
        vec![uniform; size]
    };
    let mut acc = 0.0;
    let cumulative = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let (min, max) = entropies.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let entropy = EntropySummary { min, mean: total / size as f64, max };
    Ok(QueryDistribution { n, probs, cumulative, entropy })
}

/// Answers one-step queries: given `σ⁰`, returns `(I¹, σ_I¹)`.
pub trait DynamicsOracle {
    fn n(&self) -> usize;
    fn query(&mut self, sigma0: &[i8]) -> Result<(usize, i8)>;
}

/// Simulated dynamics of a known model.
pub struct GlauberOracle<'a, R> {
    model: &'a IsingModel,
    rng: R,
    scratch: Vec<i8>,
}

impl<'a, R: Rng> GlauberOracle<'a, R> {
    pub fn new(model: &'a IsingModel, rng: R) -> Self {
        Self { model, rng, scratch: vec![0; model.n()] }
    }
}

impl<R: Rng> DynamicsOracle for GlauberOracle<'_, R> {
    fn n(&self) -> usize {
        self.model.n()
    }

    fn query(&mut self, sigma0: &[i8]) -> Result<(usize, i8)> {
        if sigma0.len() != self.model.n() {
            return Err(Error::DimensionMismatch { expected: self.model.n(), got: sigma0.len() });
        }
        self.scratch.copy_from_slice(sigma0);
        Ok(glauber_update(self.model, &mut self.scratch, &mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub i_max: usize,
    pub m_b: usize,
    /// Size of the uniformly drawn seed set.
    pub initial: usize,
    pub reg: RegularizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Query uniformly in every round (`μ = 0`).
    #[serde(default)]
    pub force_uniform: bool,
}

impl ActiveConfig {
    /// Split a total budget `m`: a seed set of `⌊fraction · m⌋` and `i_max`
    /// equal batches of `⌊(m - seed) / i_max⌋`.
    pub fn from_budget(m: usize, i_max: usize, initial_fraction: f64, reg: RegularizationConfig) -> Result<Self> {
        if !(initial_fraction > 0.0 && initial_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("initial_fraction must lie in (0, 1), got {initial_fraction}")));
        }
        if i_max == 0 {
            return Err(Error::InvalidConfig("i_max must be at least 1".into()));
        }
        let initial = (initial_fraction * m as f64).floor() as usize;
        let m_b = (m - initial) / i_max;
        let cfg = Self { i_max, m_b, initial, reg, solver: SolverConfig::default(), force_uniform: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total(&self) -> usize {
        self.initial + self.i_max * self.m_b
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_max == 0 || self.m_b == 0 || self.initial == 0 {
            return Err(Error::InvalidConfig("i_max, m_b and the seed set must all be at least 1".into()));
        }
        self.reg.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Samples accumulated before this round's queries.
    pub samples: usize,
    pub mu: f64,
    pub entropy: EntropySummary,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ActiveOutcome {
    pub estimates: Vec<NeighborhoodEstimate>,
    pub samples: SampleSet,
    pub rounds: Vec<RoundLog>,
}

impl ActiveOutcome {
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// D-RISE on every node. Nodes without updates get a zero estimate when
/// `allow_empty` is set.
fn fit_all(
    samples: &SampleSet,
    cfg: &ActiveConfig,
    allow_empty: bool,
) -> Result<(Vec<NeighborhoodEstimate>, Vec<f64>)> {
    let n = samples.n();
    let fits = (0..n)
        .into_par_iter()
        .map(|u| {
            if samples.count(u) == 0 {
                if allow_empty {
                    return Ok((zero_estimate(u, n), f64::NAN));
                }
                return Err(Error::NoUpdates { node: u });
            }
            let lambda = estimators::lambda_for_node(&cfg.reg, samples, u)?;
            Ok((estimators::fit_drise(samples, u, lambda, &cfg.solver)?, lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fits.into_iter().unzip())
}

fn zero_estimate(u: usize, n: usize) -> NeighborhoodEstimate {
    NeighborhoodEstimate {
        node: u,
        couplings: vec![0.0; n - 1],
        field: 0.0,
        objective_value: 1.0,
        iterations: 0,
        converged: true,
        kkt_residual: 0.0,
        clamp_events: 0,
    }
}

/// Run the active learning loop against `oracle`.
pub fn active_learn<O: DynamicsOracle, R: Rng + ?Sized>(
    oracle: &mut O,
    cfg: &ActiveConfig,
    rng: &mut R,
) -> Result<ActiveOutcome> {
    cfg.validate()?;
    let n = oracle.n();
    if n > QUERY_ENUMERATION_LIMIT {
        return Err(Error::TooLargeForEnumeration { n, limit: QUERY_ENUMERATION_LIMIT });
    }
    let mut samples = SampleSet::with_capacity(n, Regime::M, cfg.total());
    let mut sigma = vec![0i8; n];
    for _ in 0..cfg.initial {
        for s in sigma.iter_mut() {
            *s = if rng.gen::<bool>() { 1 } else { -1 };
        }
        let (node, s1) = oracle.query(&sigma).map_err(|e| Error::Oracle { round: 0, message: e.to_string() })?;
        samples.push_raw(&sigma, node, s1);
    }
    let (mut estimates, mut lambdas) = fit_all(&samples, cfg, true)?;
    let mut rounds = Vec::with_capacity(cfg.i_max);
    for round in 1..=cfg.i_max {
        let mu = if cfg.force_uniform { 0.0 } else { mixing_coefficient(samples.len())? };
        let q = build_query_distribution(&model_from_estimates(&estimates)?, mu)?;
        rounds.push(RoundLog {
            round,
            samples: samples.len(),
            mu,
            entropy: q.entropy_summary(),
            lambdas: lambdas.clone(),
        });
        for _ in 0..cfg.m_b {
            let query = q.sample(rng);
            let (node, s1) = oracle.query(&query).map_err(|e| Error::Oracle { round, message: e.to_string() })?;
            samples.push_raw(&query, node, s1);
        }
        let last = round == cfg.i_max;
        (estimates, lambdas) = fit_all(&samples, cfg, !last)?;
    }
    Ok(ActiveOutcome { estimates, samples, rounds })
}

/// `m*` where each trial is an independent active learning run with budget
/// `m` split as `⌊m/3⌋` plus `i_max` batches. Only D-RISE is used.
pub fn find_m_star_active(spec: &MStarSpec, i_max: usize) -> Result<MStarResult> {
    let model = build_topology(&spec.topology)?;
    let alpha = model_stats(&model)?.alpha;
    let beta_key = rng::key_f64(spec.topology.beta_value);
    find_m_star_with(spec, model.n(), |m, t| {
        let mut cfg = ActiveConfig::from_budget(m, i_max, 1.0 / 3.0, spec.reg)?;
        cfg.solver = spec.solver;
        let path = [beta_key, m as u64, t as u64];
        let mut oracle = GlauberOracle::new(&model, rng::stream(spec.master_seed, Purpose::Oracle, &path));
        let mut r = rng::stream(spec.master_seed, Purpose::Queries, &path);
        match active_learn(&mut oracle, &cfg, &mut r) {
            Ok(out) => Ok(structure_success(&threshold_edges(&average_couplings(&out.estimates)?, alpha)?, &model)),
            Err(Error::NoUpdates { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    })
}
