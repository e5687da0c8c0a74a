//! Glauber dynamics sampling in the trajectory (T) and multi-start (M)
//! regimes.
//!
//! A [`SampleSet`] stores each sample compactly as its pre-update row plus
//! the updated node and its new spin; the post-update configuration is
//! implied by the single-site invariant.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::IsingModel;

/// A length-`n` vector over `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(s) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidData(format!("spin value {s} is not ±1")));
        }
        Ok(Self(spins))
    }

    pub(crate) fn from_vec_unchecked(spins: Vec<i8>) -> Self {
        debug_assert!(spins.iter().all(|&s| s == 1 || s == -1));
        Self(spins)
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<i8> {
        self.0
    }

    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|&s| -s).collect())
    }
}

impl std::ops::Index<usize> for SpinConfiguration {
    type Output = i8;

    fn index(&self, i: usize) -> &i8 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for SpinConfiguration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i8>::deserialize(d)?;
        SpinConfiguration::new(v).map_err(serde::de::Error::custom)
    }
}

/// One Glauber update: configuration before, configuration after, and the
/// node that was resampled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicsSample {
    #[serde(rename = "s0")]
    pub sigma0: SpinConfiguration,
    #[serde(rename = "s1")]
    pub sigma1: SpinConfiguration,
    #[serde(rename = "I")]
    pub updated_node: usize,
}

impl DynamicsSample {
    /// Checks that `sigma0` and `sigma1` agree everywhere except possibly at
    /// `updated_node`.
    pub fn validate(&self) -> Result<()> {
        let n = self.sigma0.len();
        if self.sigma1.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.sigma1.len() });
        }
        if self.updated_node >= n {
            return Err(Error::IndexOutOfRange { index: self.updated_node, n });
        }
        let bad = (0..n).find(|&j| j != self.updated_node && self.sigma0[j] != self.sigma1[j]);
        match bad {
            Some(j) => Err(Error::InvalidData(format!(
                "sample changes coordinate {j} but updated node is {}",
                self.updated_node
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    T,
    M,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::T => "T",
            Regime::M => "M",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(Regime::T),
            "M" | "m" => Ok(Regime::M),
            other => Err(Error::InvalidConfig(format!("unknown regime {other:?}"))),
        }
    }
}

/// Ordered samples with per-node update counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    n: usize,
    regime: Regime,
    sigma0: Vec<i8>,
    nodes: Vec<u32>,
    new_spins: Vec<i8>,
    per_node_counts: Vec<usize>,
}

impl SampleSet {
    pub fn new(n: usize, regime: Regime) -> Self {
        Self { n, regime, sigma0: Vec::new(), nodes: Vec::new(), new_spins: Vec::new(), per_node_counts: vec![0; n] }
    }

    pub fn with_capacity(n: usize, regime: Regime, m: usize) -> Self {
        let mut s = Self::new(n, regime);
        s.sigma0.reserve(n * m);
        s.nodes.reserve(m);
        s.new_spins.reserve(m);
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `m_i` for every node.
    pub fn per_node_counts(&self) -> &[usize] {
        &self.per_node_counts
    }

    pub fn count(&self, node: usize) -> usize {
        self.per_node_counts[node]
    }

    #[inline]
    pub fn sigma0(&self, t: usize) -> &[i8] {
        &self.sigma0[t * self.n..(t + 1) * self.n]
    }

    #[inline]
    pub fn updated_node(&self, t: usize) -> usize {
        self.nodes[t] as usize
    }

    /// `σ¹` at the updated node.
    #[inline]
    pub fn new_spin(&self, t: usize) -> i8 {
        self.new_spins[t]
    }

    /// Coordinate `j` of the post-update configuration.
    #[inline]
    pub fn sigma1_at(&self, t: usize, j: usize) -> i8 {
        if j == self.updated_node(t) {
            self.new_spins[t]
        } else {
            self.sigma0(t)[j]
        }
    }

    pub fn sample(&self, t: usize) -> DynamicsSample {
        let s0 = self.sigma0(t).to_vec();
        let mut s1 = s0.clone();
        s1[self.updated_node(t)] = self.new_spin(t);
        DynamicsSample {
            sigma0: SpinConfiguration::from_vec_unchecked(s0),
            sigma1: SpinConfiguration::from_vec_unchecked(s1),
            updated_node: self.updated_node(t),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = DynamicsSample> + '_ {
        (0..self.len()).map(|t| self.sample(t))
    }

    /// Indices of the samples that updated `node`.
    pub fn indices_for(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(move |(_, &u)| u as usize == node).map(|(t, _)| t)
    }

    pub(crate) fn push_raw(&mut self, sigma0: &[i8], node: usize, new_spin: i8) {
        debug_assert_eq!(sigma0.len(), self.n);
        self.sigma0.extend_from_slice(sigma0);
        self.nodes.push(node as u32);
        self.new_spins.push(new_spin);
        self.per_node_counts[node] += 1;
    }

    /// Append a sample after validating it. In the T-regime the chain
    /// invariant (`σ⁰` of this sample equals `σ¹` of the previous) is also
    /// enforced.
    pub fn push(&mut self, sample: &DynamicsSample) -> Result<()> {
        if sample.sigma0.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: sample.sigma0.len() });
        }
        sample.validate()?;
        if self.regime == Regime::T && !self.is_empty() {
            let last = self.len() - 1;
            let chained = (0..self.n).all(|j| self.sigma1_at(last, j) == sample.sigma0[j]);
            if !chained {
                return Err(Error::InvalidData(format!("T-regime chain broken at sample {}", self.len())));
            }
        }
        self.push_raw(sample.sigma0.as_slice(), sample.updated_node, sample.sigma1[sample.updated_node]);
        Ok(())
    }

    /// Concatenate another set with the same `n`; the regime of `self` wins.
    pub fn extend_from(&mut self, other: &SampleSet) -> Result<()> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        for t in 0..other.len() {
            self.push_raw(other.sigma0(t), other.updated_node(t), other.new_spin(t));
        }
        Ok(())
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: perm.len() });
        }
        let mut out = SampleSet::with_capacity(self.n, self.regime, self.len());
        let mut row = vec![0i8; self.n];
        for t in 0..self.len() {
            for (i, &s) in self.sigma0(t).iter().enumerate() {
                row[perm[i]] = s;
            }
            out.push_raw(&row, perm[self.updated_node(t)], self.new_spin(t));
        }
        Ok(out)
    }

    /// JSON-lines: a header `{"n", "regime", "m"}` then one
    /// `{"s0", "s1", "I"}` record per sample.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = SampleSetHeader { n: self.n, regime: self.regime, m: self.len() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in self.iter() {
            serde_json::to_writer(&mut w, &s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: SampleSetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::InvalidData("empty sample file".into())),
        };
        let mut set = SampleSet::with_capacity(header.n, header.regime, header.m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: DynamicsSample = serde_json::from_str(&line)?;
            set.push(&sample)?;
        }
        if set.len() != header.m {
            return Err(Error::InvalidData(format!(
                "header declares m = {} but file has {} samples",
                header.m,
                set.len()
            )));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleSetHeader {
    n: usize,
    regime: Regime,
    m: usize,
}

/// Draws a configuration from a user-supplied source.
pub type ExternalSampler = Arc<dyn Fn(&mut dyn RngCore) -> SpinConfiguration + Send + Sync>;

/// Law of `σ⁰`.
#[derive(Clone, Default)]
pub enum InitialDistribution {
    #[default]
    Uniform,
    Fixed(SpinConfiguration),
    Categorical(Categorical),
    External(ExternalSampler),
}

impl fmt::Debug for InitialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("Uniform"),
            Self::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            Self::Categorical(c) => f.debug_tuple("Categorical").field(&c.len()).finish(),
            Self::External(_) => f.write_str("External(..)"),
        }
    }
}

impl InitialDistribution {
    pub fn categorical(table: Vec<(SpinConfiguration, f64)>) -> Result<Self> {
        Categorical::new(table).map(Self::Categorical)
    }
}

/// Finite distribution over configurations, sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    items: Vec<SpinConfiguration>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Categorical {
    pub fn new(table: Vec<(SpinConfiguration, f64)>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidDistribution("empty categorical table".into()));
        }
        let n = table[0].0.len();
        if table.iter().any(|(s, _)| s.len() != n) {
            return Err(Error::InvalidDistribution("configurations of differing length".into()));
        }
        if let Some((_, p)) = table.iter().find(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("invalid probability {p}")));
        }
        let total: f64 = table.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = table
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        let (items, probs) = table.into_iter().unzip();
        Ok(Self { items, probs, cumulative })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn config_len(&self) -> usize {
        self.items[0].len()
    }

    pub fn items(&self) -> impl Iterator<Item = (&SpinConfiguration, f64)> {
        self.items.iter().zip(self.probs.iter().copied())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &SpinConfiguration {
        let u: f64 = rng.gen::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.items.len() - 1);
        &self.items[k]
    }
}

/// Draw `σ⁰ ~ p0`. The uniform law draws each coordinate as an independent
/// fair coin, one `u64` per 64 coordinates.
pub fn sample_initial<R: Rng + ?Sized>(p0: &InitialDistribution, n: usize, rng: &mut R) -> Result<SpinConfiguration> {
    let check = |s: &SpinConfiguration| {
        if s.len() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: n, got: s.len() })
        }
    };
    match p0 {
        InitialDistribution::Uniform => {
            let mut spins = Vec::with_capacity(n);
            fill_uniform(&mut spins, n, rng);
            Ok(SpinConfiguration(spins))
        }
        InitialDistribution::Fixed(s) => {
            check(s)?;
            Ok(s.clone())
        }
        InitialDistribution::Categorical(c) => {
            let s = c.sample(rng);
            check(s)?;
            Ok(s.clone())
        }
        InitialDistribution::External(f) => {
            let mut adapter = DynRng(rng);
            let s = f(&mut adapter);
            check(&s)?;
            Ok(s)
        }
    }
}

fn fill_uniform<R: Rng + ?Sized>(out: &mut Vec<i8>, n: usize, rng: &mut R) {
    out.clear();
    let mut bits = 0u64;
    for i in 0..n {
        if i % 64 == 0 {
            bits = rng.next_u64();
        }
        out.push(if bits >> (i % 64) & 1 == 1 { 1 } else { -1 });
    }
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// `P(σ_node = value | σ)` under the Glauber update rule.
pub fn conditional_prob(model: &IsingModel, node: usize, sigma: &[i8], value: i8) -> Result<f64> {
    if node >= model.n() {
        return Err(Error::IndexOutOfRange { index: node, n: model.n() });
    }
    if sigma.len() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), got: sigma.len() });
    }
    Ok(prob_up(model.local_field(node, sigma), value))
}

/// `exp(v h) / (2 cosh h)` written as a logistic to avoid overflow.
#[inline]
pub(crate) fn prob_up(h: f64, value: i8) -> f64 {
    1.0 / (1.0 + (-2.0 * f64::from(value) * h).exp())
}

/// Resample one uniformly chosen node in place.
///
/// Consumes exactly two `f64` draws: first the node index
/// `⌊u₁ n⌋`, then `u₂`; the new spin is `+1` iff `u₂ < P(+1)`.
/// Returns `(node, new_spin)`.
#[inline]
pub fn glauber_update<R: Rng + ?Sized>(model: &IsingModel, sigma: &mut [i8], rng: &mut R) -> (usize, i8) {
    let n = model.n();
    let node = ((rng.gen::<f64>() * n as f64) as usize).min(n - 1);
    let u: f64 = rng.gen();
    let p = prob_up(model.local_field(node, sigma), 1);
    let s = if u < p { 1 } else { -1 };
    sigma[node] = s;
    (node, s)
}

pub fn glauber_step<R: Rng + ?Sized>(
    model: &IsingModel,
    sigma: &SpinConfiguration,
    rng: &mut R,
) -> Result<DynamicsSample> {
    if sigma.len() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), got: sigma.len() });
    }
    let mut next = sigma.0.clone();
    let (node, _) = glauber_update(model, &mut next, rng);
    Ok(DynamicsSample { sigma0: sigma.clone(), sigma1: SpinConfiguration(next), updated_node: node })
}

/// One trajectory: `σ⁰ ~ p0`, `burn_in` discarded steps, then `m` recorded
/// chained steps.
pub fn run_t_regime_with_burn_in<R: Rng + ?Sized>(
    model: &IsingModel,
    p0: &InitialDistribution,
    m: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let n = model.n();
    let mut sigma = sample_initial(p0, n, rng)?.0;
    for _ in 0..burn_in {
        glauber_update(model, &mut sigma, rng);
    }
    let mut set = SampleSet::with_capacity(n, Regime::T, m);
    let mut before = sigma.clone();
    for _ in 0..m {
        before.copy_from_slice(&sigma);
        let (node, s) = glauber_update(model, &mut sigma, rng);
        set.push_raw(&before, node, s);
    }
    Ok(set)
}

pub fn run_t_regime<R: Rng + ?Sized>(
    model: &IsingModel,
    p0: &InitialDistribution,
    m: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    run_t_regime_with_burn_in(model, p0, m, 0, rng)
}

/// `m` independent one-step runs, each from a fresh `σ⁰ ~ p0`.
pub fn run_m_regime<R: Rng + ?Sized>(
    model: &IsingModel,
    p0: &InitialDistribution,
    m: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let n = model.n();
    let mut set = SampleSet::with_capacity(n, Regime::M, m);
    let mut sigma = Vec::with_capacity(n);
    let mut scratch = vec![0i8; n];
    for _ in 0..m {
        match p0 {
            InitialDistribution::Uniform => fill_uniform(&mut sigma, n, rng),
            other => sigma = sample_initial(other, n, rng)?.0,
        }
        scratch.copy_from_slice(&sigma);
        let (node, s) = glauber_update(model, &mut scratch, rng);
        set.push_raw(&sigma, node, s);
    }
    Ok(set)
}

/// Multi-start protocol: one fresh trajectory per batch size. Batches of
/// size one give the M-regime, a single batch gives the T-regime. The
/// result is tagged `T` only when there is one batch.
pub fn run_batches<R: Rng + ?Sized>(
    model: &IsingModel,
    p0: &InitialDistribution,
    batch_sizes: &[usize],
    rng: &mut R,
) -> Result<SampleSet> {
    let regime = if batch_sizes.len() == 1 { Regime::T } else { Regime::M };
    let total = batch_sizes.iter().sum();
    let mut out = SampleSet::with_capacity(model.n(), regime, total);
    for &mb in batch_sizes {
        let batch = run_t_regime(model, p0, mb, rng)?;
        out.extend_from(&batch)?;
    }
    Ok(out)
}

/// Single-site transition probability `P(σ → σ')` of the random-scan
/// Glauber chain. Zero unless the configurations differ in at most one
/// coordinate.
pub fn transition_probability(model: &IsingModel, from: &[i8], to: &[i8]) -> Result<f64> {
    let n = model.n();
    if from.len() != n || to.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: from.len().min(to.len()) });
    }
    let diff: Vec<usize> = (0..n).filter(|&i| from[i] != to[i]).collect();
    let inv_n = 1.0 / n as f64;
    Ok(match diff.as_slice() {
        [] => (0..n).map(|i| inv_n * prob_up(model.local_field(i, from), from[i])).sum(),
        [i] => inv_n * prob_up(model.local_field(*i, from), to[*i]),
        _ => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{config_from_index, exact_distribution};
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;

    fn free(n: usize) -> IsingModel {
        IsingModel::with_zero_field(n, vec![]).unwrap()
    }

    #[test]
    fn conditional_prob_examples() {
        let m = free(3);
        let s = [1, -1, 1];
        assert_eq!(conditional_prob(&m, 0, &s, 1).unwrap(), 0.5);
        assert_eq!(conditional_prob(&m, 0, &s, -1).unwrap(), 0.5);

        let pair = IsingModel::with_zero_field(2, vec![(0, 1, 0.5)]).unwrap();
        let p = conditional_prob(&pair, 0, &[1, 1], 1).unwrap();
        assert_relative_eq!(p, 0.7310585786300049, max_relative = 1e-15);
        assert!(conditional_prob(&pair, 2, &[1, 1], 1).is_err());

        let tri = IsingModel::new(3, vec![(0, 1, 1.3), (0, 2, -0.4)], vec![0.2, 0.0, -1.0]).unwrap();
        for node in 0..3 {
            let a = conditional_prob(&tri, node, &[1, -1, 1], 1).unwrap();
            let b = conditional_prob(&tri, node, &[1, -1, 1], -1).unwrap();
            assert!((a + b - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn free_spin_is_a_fair_coin() {
        let m = free(8);
        let mut rng = stream(1, Purpose::Fixture, &[]);
        let mut sigma = SpinConfiguration::all_up(8);
        let steps = 100_000;
        let mut ups = 0usize;
        let mut node_counts = [0usize; 8];
        for _ in 0..steps {
            let s = glauber_step(&m, &sigma, &mut rng).unwrap();
            ups += (s.sigma1[s.updated_node] == 1) as usize;
            node_counts[s.updated_node] += 1;
            sigma = s.sigma1;
        }
        let frac = ups as f64 / steps as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        // χ² with 7 degrees of freedom; 1% critical value is 18.475.
        let expected = steps as f64 / 8.0;
        let chi2: f64 = node_counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }

    #[test]
    fn glauber_step_replays() {
        let m = IsingModel::with_zero_field(4, vec![(0, 1, 0.9), (2, 3, -0.3)]).unwrap();
        let s = SpinConfiguration::new(vec![1, -1, -1, 1]).unwrap();
        let a = glauber_step(&m, &s, &mut stream(5, Purpose::Samples, &[])).unwrap();
        let b = glauber_step(&m, &s, &mut stream(5, Purpose::Samples, &[])).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn t_regime_chains() {
        let m = IsingModel::with_zero_field(5, vec![(0, 1, 0.5), (1, 2, 0.5)]).unwrap();
        let mut rng = stream(2, Purpose::Samples, &[]);
        let one = run_t_regime(&m, &InitialDistribution::Uniform, 1, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        let three = run_t_regime(&m, &InitialDistribution::Uniform, 3, &mut rng).unwrap();
        assert_eq!(three.sample(1).sigma0, three.sample(0).sigma1);
        assert_eq!(three.sample(2).sigma0, three.sample(1).sigma1);
        assert_eq!(three.regime(), Regime::T);
        assert!(run_t_regime(&m, &InitialDistribution::Uniform, 0, &mut rng).is_err());
    }

    #[test]
    fn t_regime_counts_concentrate() {
        let n = 10;
        let m = 100_000;
        let set =
            run_t_regime(&free(n), &InitialDistribution::Uniform, m, &mut stream(3, Purpose::Samples, &[])).unwrap();
        let mean = (m / n) as f64;
        let band = 4.0 * mean.sqrt();
        assert_eq!(set.per_node_counts().iter().sum::<usize>(), m);
        for &c in set.per_node_counts() {
            assert!((c as f64 - mean).abs() <= band, "{c}");
        }
    }

    #[test]
    fn m_regime_initial_marginals() {
        let n = 6;
        let model = IsingModel::with_zero_field(n, vec![(0, 1, 1.0), (2, 3, -1.0)]).unwrap();
        let set =
            run_m_regime(&model, &InitialDistribution::Uniform, 1000, &mut stream(4, Purpose::Samples, &[])).unwrap();
        assert_eq!(set.regime(), Regime::M);
        for j in 0..n {
            let mean: f64 = (0..set.len()).map(|t| f64::from(set.sigma0(t)[j])).sum::<f64>() / 1000.0;
            assert!(mean.abs() < 0.1, "coordinate {j}: {mean}");
        }
        // Lag-one correlation of σ⁰ across samples.
        let lag: f64 = (1..set.len()).map(|t| f64::from(set.sigma0(t)[0] * set.sigma0(t - 1)[0])).sum::<f64>() / 999.0;
        assert!(lag.abs() < 0.13, "{lag}");
        for s in set.iter() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn initial_distribution_kinds() {
        let mut rng = stream(6, Purpose::Samples, &[]);
        let a = SpinConfiguration::new(vec![1, -1, -1]).unwrap();
        assert_eq!(sample_initial(&InitialDistribution::Fixed(a.clone()), 3, &mut rng).unwrap(), a);
        let cat = InitialDistribution::categorical(vec![(a.clone(), 1.0)]).unwrap();
        for _ in 0..10 {
            assert_eq!(sample_initial(&cat, 3, &mut rng).unwrap(), a);
        }
        assert!(sample_initial(&InitialDistribution::Fixed(a.clone()), 4, &mut rng).is_err());
        let bad = InitialDistribution::categorical(vec![(a.clone(), 0.7)]);
        assert!(matches!(bad, Err(Error::InvalidDistribution(_))));
        let u = sample_initial(&InitialDistribution::Uniform, 16, &mut rng).unwrap();
        assert_eq!(u.len(), 16);
        let ext = InitialDistribution::External(Arc::new(|_: &mut dyn RngCore| SpinConfiguration::all_up(3)));
        assert_eq!(sample_initial(&ext, 3, &mut rng).unwrap(), SpinConfiguration::all_up(3));
    }

    #[test]
    fn spin_values_validated() {
        assert!(SpinConfiguration::new(vec![1, 0]).is_err());
        let bad = DynamicsSample {
            sigma0: SpinConfiguration::new(vec![1, 1, 1]).unwrap(),
            sigma1: SpinConfiguration::new(vec![-1, -1, 1]).unwrap(),
            updated_node: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let m = IsingModel::with_zero_field(3, vec![(0, 1, 0.5)]).unwrap();
        let set = run_t_regime(&m, &InitialDistribution::Uniform, 20, &mut stream(8, Purpose::Samples, &[])).unwrap();
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"n":3,"regime":"T","m":20}"#));
        let back = SampleSet::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        let mut again = Vec::new();
        back.write_jsonl(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn batches_compose() {
        let m = free(4);
        let mut rng = stream(9, Purpose::Samples, &[]);
        let set = run_batches(&m, &InitialDistribution::Uniform, &[3, 2, 5], &mut rng).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(set.regime(), Regime::M);
        assert_eq!(set.sample(1).sigma0, set.sample(0).sigma1);
    }

    #[test]
    fn detailed_balance_small() {
        let model =
            IsingModel::new(4, vec![(0, 1, 0.8), (1, 2, -1.2), (2, 3, 0.4), (0, 3, 0.3)], vec![0.1, -0.2, 0.0, 0.3])
                .unwrap();
        let pi = exact_distribution(&model).unwrap();
        for a in 0..16u64 {
            let sa = config_from_index(a, 4);
            for i in 0..4 {
                let b = a ^ (1 << i);
                let sb = config_from_index(b, 4);
                let lhs = pi[a as usize] * transition_probability(&model, sa.as_slice(), sb.as_slice()).unwrap();
                let rhs = pi[b as usize] * transition_probability(&model, sb.as_slice(), sa.as_slice()).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}
