//! Learning from binned spike trains.
//!
//! Spike times are binned into a `±1` raster, adjacent bins that differ in
//! exactly one neuron become M-regime samples, and the fitted model is
//! checked by comparing time-ordered correlations predicted under the same
//! initial and update-identity distributions with those in the data.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{conditional_prob, Categorical, Regime, SampleSet, SpinConfiguration};
use crate::error::{Error, Result};
use crate::estimators::{NeighborhoodEstimate, RegularizationConfig, SolverConfig};
use crate::model::IsingModel;
use crate::reconstruction::{average_couplings, learn_structure, model_from_estimates};
use crate::Estimator;

pub const DEFAULT_BIN_MS: f64 = 20.0;
pub const DEFAULT_GAP_BINS: usize = 20;

/// Binned spins, stored one bin (column) at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRaster {
    n_neurons: usize,
    n_bins: usize,
    bin_ms: f64,
    spins: Vec<i8>,
}

impl SpikeRaster {
    /// `columns[t]` is the configuration in bin `t`.
    pub fn from_columns(columns: &[Vec<i8>], bin_ms: f64) -> Result<Self> {
        if !(bin_ms > 0.0 && bin_ms.is_finite()) {
            return Err(Error::InvalidConfig(format!("bin_ms must be positive, got {bin_ms}")));
        }
        let n = columns.first().map_or(0, Vec::len);
        let mut spins = Vec::with_capacity(n * columns.len());
        for (t, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::InvalidData(format!("bin {t} has {} neurons, expected {n}", c.len())));
            }
            if let Some(s) = c.iter().find(|&&s| s != 1 && s != -1) {
                return Err(Error::InvalidData(format!("spin value {s} in bin {t} is not ±1")));
            }
            spins.extend_from_slice(c);
        }
        Ok(Self { n_neurons: n, n_bins: columns.len(), bin_ms, spins })
    }

    /// One row per neuron.
    pub fn from_rows(rows: &[Vec<i8>], bin_ms: f64) -> Result<Self> {
        let n_bins = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != n_bins) {
            return Err(Error::InvalidData(format!("neuron {i} has {} bins, expected {n_bins}", rows[i].len())));
        }
        let columns: Vec<Vec<i8>> = (0..n_bins).map(|t| rows.iter().map(|r| r[t]).collect()).collect();
        Self::from_columns(&columns, bin_ms)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_ms(&self) -> f64 {
        self.bin_ms
    }

    pub fn column(&self, t: usize) -> &[i8] {
        &self.spins[t * self.n_neurons..(t + 1) * self.n_neurons]
    }

    pub fn spin(&self, neuron: usize, t: usize) -> i8 {
        self.spins[t * self.n_neurons + neuron]
    }

    /// Keep only the listed neurons, in the given order.
    pub fn select(&self, neurons: &[usize]) -> Result<Self> {
        if let Some(&i) = neurons.iter().find(|&&i| i >= self.n_neurons) {
            return Err(Error::IndexOutOfRange { index: i, n: self.n_neurons });
        }
        let columns: Vec<Vec<i8>> =
            (0..self.n_bins).map(|t| neurons.iter().map(|&i| self.spin(i, t)).collect()).collect();
        let mut out = Self::from_columns(&columns, self.bin_ms)?;
        out.n_neurons = neurons.len();
        Ok(out)
    }

    /// Rows of `±1`, one line per neuron, no header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for i in 0..self.n_neurons {
            wtr.write_record((0..self.n_bins).map(|t| self.spin(i, t).to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, bin_ms: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<i8>().map_err(|_| Error::InvalidData(format!("row {line}: bad spin {f:?}"))))
                .collect::<Result<Vec<i8>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows, bin_ms)
    }
}

/// `+1` in a bin iff the neuron fires at least once in it.
pub fn bin_spikes(spike_times: &[Vec<f64>], duration_ms: f64, bin_ms: f64) -> Result<SpikeRaster> {
    if !(bin_ms > 0.0 && bin_ms.is_finite()) {
        return Err(Error::InvalidConfig(format!("bin_ms must be positive, got {bin_ms}")));
    }
    if !(duration_ms > 0.0 && duration_ms.is_finite()) {
        return Err(Error::InvalidConfig(format!("duration_ms must be positive, got {duration_ms}")));
    }
    let n = spike_times.len();
    let n_bins = (duration_ms / bin_ms).ceil() as usize;
    let mut spins = vec![-1i8; n * n_bins];
    for (i, times) in spike_times.iter().enumerate() {
        let mut prev = f64::NEG_INFINITY;
        for &t in times {
            if !(0.0..duration_ms).contains(&t) {
                return Err(Error::InvalidData(format!("neuron {i}: spike at {t} ms outside [0, {duration_ms})")));
            }
            if t < prev {
                return Err(Error::InvalidData(format!("neuron {i}: spike times not sorted at {t} ms")));
            }
            prev = t;
            let b = ((t / bin_ms) as usize).min(n_bins - 1);
            spins[b * n + i] = 1;
        }
    }
    Ok(SpikeRaster { n_neurons: n, n_bins, bin_ms, spins })
}

#[derive(Debug, Deserialize)]
struct SpikeRow {
    neuron_id: usize,
    time_ms: f64,
}

/// Read `neuron_id,time_ms` rows (with header). Times are sorted per neuron.
/// `n_neurons` defaults to one more than the largest id seen.
pub fn read_spike_csv<R: Read>(r: R, n_neurons: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); n_neurons.unwrap_or(0)];
    for rec in rdr.deserialize() {
        let row: SpikeRow = rec?;
        if !row.time_ms.is_finite() {
            return Err(Error::InvalidData(format!("neuron {}: non-finite spike time", row.neuron_id)));
        }
        if row.neuron_id >= times.len() {
            match n_neurons {
                Some(n) => return Err(Error::IndexOutOfRange { index: row.neuron_id, n }),
                None => times.resize(row.neuron_id + 1, Vec::new()),
            }
        }
        times[row.neuron_id].push(row.time_ms);
    }
    for t in &mut times {
        t.sort_by(f64::total_cmp);
    }
    Ok(times)
}

pub fn write_spike_csv<W: Write>(spike_times: &[Vec<f64>], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["neuron_id", "time_ms"])?;
    for (i, times) in spike_times.iter().enumerate() {
        for t in times {
            wtr.write_record([i.to_string(), t.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractionCounts {
    pub pairs: usize,
    pub extracted: usize,
    pub no_flip: usize,
    pub multi_flip: usize,
}

/// Adjacent bin pairs where exactly one neuron changes sign, as M-regime
/// samples with that neuron as the updated node.
pub fn extract_single_flip_samples(raster: &SpikeRaster) -> (SampleSet, ExtractionCounts) {
    let n = raster.n_neurons;
    let mut set = SampleSet::new(n, Regime::M);
    let mut counts = ExtractionCounts { pairs: raster.n_bins.saturating_sub(1), ..Default::default() };
    for t in 1..raster.n_bins {
        let (a, b) = (raster.column(t - 1), raster.column(t));
        let mut flips = (0..n).filter(|&i| a[i] != b[i]);
        match (flips.next(), flips.next()) {
            (None, _) => counts.no_flip += 1,
            (Some(l), None) => {
                set.push_raw(a, l, b[l]);
                counts.extracted += 1;
            }
            _ => counts.multi_flip += 1,
        }
    }
    (set, counts)
}

/// Square matrix with the indices whose variance was zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub zero_variance: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in &self.values {
            wtr.write_record(row.iter().map(f64::to_string))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Pearson correlation of `x[i]` against `y[j]` over `m` paired rows given
/// as flat row-major `±1` arrays.
fn pearson(x: &[i8], y: &[i8], n: usize, m: usize) -> CorrelationMatrix {
    let mean = |a: &[i8], i: usize| (0..m).map(|t| f64::from(a[t * n + i])).sum::<f64>() / m as f64;
    let mx: Vec<f64> = (0..n).map(|i| mean(x, i)).collect();
    let my: Vec<f64> = (0..n).map(|j| mean(y, j)).collect();
    // Variance of a ±1 variable is 1 - mean².
    let sx: Vec<f64> = mx.iter().map(|m| (1.0 - m * m).max(0.0).sqrt()).collect();
    let sy: Vec<f64> = my.iter().map(|m| (1.0 - m * m).max(0.0).sqrt()).collect();
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if sx[i] == 0.0 || sy[j] == 0.0 {
                        return 0.0;
                    }
                    let exy = (0..m).map(|t| f64::from(x[t * n + i] * y[t * n + j])).sum::<f64>() / m as f64;
                    ((exy - mx[i] * my[j]) / (sx[i] * sy[j])).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let zero_variance = (0..n).filter(|&i| sx[i] == 0.0 || sy[i] == 0.0).collect();
    CorrelationMatrix { n, values, zero_variance }
}

/// Same-bin correlations, treating every bin as an independent draw.
pub fn iid_correlations(raster: &SpikeRaster) -> Result<CorrelationMatrix> {
    if raster.n_bins < 2 {
        return Err(Error::InvalidData("correlations need at least two bins".into()));
    }
    Ok(pearson(&raster.spins, &raster.spins, raster.n_neurons, raster.n_bins))
}

/// `Corr(σ_i⁰, σ_j¹)` across samples.
pub fn time_correlations(samples: &SampleSet) -> Result<CorrelationMatrix> {
    let (n, m) = (samples.n(), samples.len());
    if m < 2 {
        return Err(Error::InvalidData("time correlations need at least two samples".into()));
    }
    let mut x = Vec::with_capacity(n * m);
    let mut y = Vec::with_capacity(n * m);
    for t in 0..m {
        x.extend_from_slice(samples.sigma0(t));
        y.extend((0..n).map(|j| samples.sigma1_at(t, j)));
    }
    Ok(pearson(&x, &y, n, m))
}

/// Empirical laws of `σ⁰` and of the updated node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalContext {
    pub p0: Categorical,
    pub p_node: Vec<f64>,
}

pub fn empirical_context(samples: &SampleSet) -> Result<EmpiricalContext> {
    let m = samples.len();
    if m == 0 {
        return Err(Error::InvalidData("empirical context needs at least one sample".into()));
    }
    let mut order = Vec::new();
    let mut counts: HashMap<&[i8], usize> = HashMap::new();
    for t in 0..m {
        let c = counts.entry(samples.sigma0(t)).or_insert(0);
        if *c == 0 {
            order.push(samples.sigma0(t));
        }
        *c += 1;
    }
    let mut table: Vec<(SpinConfiguration, f64)> = order
        .iter()
        .map(|s| (SpinConfiguration::new(s.to_vec()).expect("±1 sample"), counts[s] as f64 / m as f64))
        .collect();
    // Absorb summation rounding so the table normalizes exactly.
    let total: f64 = table.iter().map(|e| e.1).sum();
    table[0].1 += 1.0 - total;
    let p_node = samples.per_node_counts().iter().map(|&c| c as f64 / m as f64).collect();
    Ok(EmpiricalContext { p0: Categorical::new(table)?, p_node })
}

/// Simulate `m_sim` one-step updates with `σ⁰ ~ p0` and `I ~ p_node`
/// drawn independently, keep those where `σ_I` flips, and correlate.
pub fn predict_time_correlations<R: Rng + ?Sized>(
    model: &IsingModel,
    ctx: &EmpiricalContext,
    m_sim: usize,
    rng: &mut R,
) -> Result<CorrelationMatrix> {
    let n = model.n();
    if ctx.p0.config_len() != n || ctx.p_node.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ctx.p_node.len() });
    }
    let mut acc = 0.0;
    let node_cdf: Vec<f64> = ctx
        .p_node
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let mut set = SampleSet::new(n, Regime::M);
    for _ in 0..m_sim {
        let sigma = ctx.p0.sample(rng).as_slice();
        let u: f64 = rng.gen::<f64>() * acc;
        let node = node_cdf.partition_point(|&c| c <= u).min(n - 1);
        let flip_to = -sigma[node];
        if rng.gen::<f64>() < conditional_prob(model, node, sigma, flip_to)? {
            set.push_raw(sigma, node, flip_to);
        }
    }
    if set.len() < 2 {
        return Err(Error::InvalidData(format!(
            "only {} simulated updates flipped a spin; increase m_sim (was {m_sim})",
            set.len()
        )));
    }
    time_correlations(&set)
}

/// `‖a - b‖_F / ‖b‖_F`.
pub fn frobenius_relative_diff(a: &CorrelationMatrix, b: &CorrelationMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch { expected: b.n, got: a.n });
    }
    let den = b.frobenius_norm();
    if den == 0.0 {
        return Err(Error::InvalidData("reference matrix has zero norm".into()));
    }
    let num =
        a.values.iter().flatten().zip(b.values.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapThreshold {
    pub delta: f64,
    /// False when no empty bin separates the small couplings from the rest;
    /// `delta` is then 0.
    pub found: bool,
}

/// Histogram `|Ĵ|` over `[0, max|Ĵ|]` with `bins` equal bins and take the
/// first empty bin above the one holding the smallest magnitude. The
/// threshold is the midpoint between the largest magnitude below that bin
/// and the smallest above it.
pub fn gap_threshold(couplings: &[f64], bins: usize) -> Result<GapThreshold> {
    if couplings.len() < 2 {
        return Err(Error::InvalidData("gap detection needs at least two couplings".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidConfig("gap detection needs at least two histogram bins".into()));
    }
    if let Some(v) = couplings.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite coupling {v}")));
    }
    let mut mags: Vec<f64> = couplings.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let max = mags[mags.len() - 1];
    let none = GapThreshold { delta: 0.0, found: false };
    if max == 0.0 {
        log::warn!("all couplings are zero; no gap");
        return Ok(none);
    }
    let width = max / bins as f64;
    let bin_of = |v: f64| ((v / width) as usize).min(bins - 1);
    let mut occupied = vec![false; bins];
    for &v in &mags {
        occupied[bin_of(v)] = true;
    }
    let Some(empty) = (bin_of(mags[0]) + 1..bins).find(|&b| !occupied[b]) else {
        log::warn!("no empty histogram bin separates the couplings; no gap");
        return Ok(none);
    };
    let edge = empty as f64 * width;
    let below = mags.iter().rev().find(|&&v| v < edge).copied().unwrap_or(0.0);
    let above = mags.iter().find(|&&v| v >= edge).copied().unwrap_or(max);
    Ok(GapThreshold { delta: 0.5 * (below + above), found: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub reg: RegularizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub m_sim: usize,
    #[serde(default = "default_gap_bins")]
    pub gap_bins: usize,
    /// Used instead of the detected gap when set.
    #[serde(default)]
    pub threshold_override: Option<f64>,
}

fn default_gap_bins() -> usize {
    DEFAULT_GAP_BINS
}

impl NeuralConfig {
    pub fn new(c_lambda: f64, m_sim: usize) -> Self {
        Self {
            reg: RegularizationConfig::new(c_lambda),
            solver: SolverConfig::default(),
            m_sim,
            gap_bins: DEFAULT_GAP_BINS,
            threshold_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralReport {
    pub neurons: usize,
    pub bins: usize,
    pub extraction: ExtractionCounts,
    pub updates_per_neuron: Vec<usize>,
    pub gap: GapThreshold,
    pub threshold: f64,
    pub kept_edges: Vec<(usize, usize, f64)>,
    pub thresholded: usize,
    pub predicted_vs_data: f64,
    pub iid_vs_time: f64,
    pub zero_variance: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NeuralOutcome {
    pub report: NeuralReport,
    pub estimates: Vec<NeighborhoodEstimate>,
    pub iid: CorrelationMatrix,
    pub time: CorrelationMatrix,
    pub predicted: CorrelationMatrix,
}

/// Extract, fit D-RISE, threshold at the coupling gap and compare predicted
/// against empirical time correlations.
pub fn run_pipeline<R: Rng + ?Sized>(raster: &SpikeRaster, cfg: &NeuralConfig, rng: &mut R) -> Result<NeuralOutcome> {
    let (samples, extraction) = extract_single_flip_samples(raster);
    if samples.is_empty() {
        return Err(Error::InvalidData("no single-flip bin pairs in the raster".into()));
    }
    // α only matters for the edge set, which is replaced by the gap rule.
    let fit = learn_structure(&samples, &cfg.reg, &cfg.solver, 1.0, Estimator::DRise)?;
    let avg = average_couplings(&fit.estimates)?;
    let values: Vec<f64> = avg.to_rows().iter().map(|r| r.2).collect();
    let gap = gap_threshold(&values, cfg.gap_bins)?;
    let threshold = cfg.threshold_override.unwrap_or(gap.delta);
    let kept_edges: Vec<_> = avg.to_rows().into_iter().filter(|r| r.2.abs() >= threshold && r.2 != 0.0).collect();
    let iid = iid_correlations(raster)?;
    let time = time_correlations(&samples)?;
    let ctx = empirical_context(&samples)?;
    let predicted = predict_time_correlations(&model_from_estimates(&fit.estimates)?, &ctx, cfg.m_sim, rng)?;
    let mut zero_variance: Vec<usize> = iid.zero_variance.iter().chain(&time.zero_variance).copied().collect();
    zero_variance.sort_unstable();
    zero_variance.dedup();
    let report = NeuralReport {
        neurons: raster.n_neurons(),
        bins: raster.n_bins(),
        extraction,
        updates_per_neuron: samples.per_node_counts().to_vec(),
        gap,
        threshold,
        thresholded: values.len() - kept_edges.len(),
        kept_edges,
        predicted_vs_data: frobenius_relative_diff(&predicted, &time)?,
        iid_vs_time: frobenius_relative_diff(&iid, &time)?,
        zero_variance,
    };
    Ok(NeuralOutcome { report, estimates: fit.estimates, iid, time, predicted })
}

/// Raster of `runs` Glauber segments, each restarted from a uniform
/// configuration and followed for `steps` updates, one bin per state.
///
/// Restarts keep the data away from equilibrium. On a stationary reversible
/// trajectory the pre-flip configuration is symmetric under flipping the
/// updated spin, so flip-only samples carry no coupling information.
pub fn synthetic_raster<R: Rng + ?Sized>(
    model: &IsingModel,
    runs: usize,
    steps: usize,
    bin_ms: f64,
    rng: &mut R,
) -> Result<SpikeRaster> {
    if runs == 0 || steps == 0 {
        return Err(Error::InvalidConfig("a synthetic raster needs at least one run of one step".into()));
    }
    if !(bin_ms > 0.0 && bin_ms.is_finite()) {
        return Err(Error::InvalidConfig(format!("bin_ms must be positive, got {bin_ms}")));
    }
    let n = model.n();
    let mut sigma = vec![-1i8; n];
    let mut spins = Vec::with_capacity(n * runs * (steps + 1));
    for _ in 0..runs {
        for s in sigma.iter_mut() {
            *s = if rng.gen::<bool>() { 1 } else { -1 };
        }
        spins.extend_from_slice(&sigma);
        for _ in 0..steps {
            crate::dynamics::glauber_update(model, &mut sigma, rng);
            spins.extend_from_slice(&sigma);
        }
    }
    Ok(SpikeRaster { n_neurons: n, n_bins: runs * (steps + 1), bin_ms, spins })
}

/// Ten-neuron model used as the synthetic stand-in for recorded data: a
/// ring with two chords, mixed signs and negative fields (mostly silent
/// cells).
pub fn closed_loop_model() -> IsingModel {
    IsingModel::new(
        10,
        [
            (0, 1, 0.9),
            (1, 2, -0.7),
            (2, 3, 0.8),
            (3, 4, 0.6),
            (4, 5, -0.9),
            (5, 6, 0.7),
            (6, 7, 0.8),
            (7, 8, -0.6),
            (8, 9, 0.9),
            (0, 9, 0.7),
            (0, 5, 0.6),
            (2, 7, -0.8),
        ],
        vec![-0.3, -0.2, -0.4, -0.1, -0.3, -0.2, -0.3, -0.4, -0.2, -0.1],
    )
    .expect("valid fixture model")
}

/// One spike at the centre of every `+1` bin; binning the result gives
/// back the raster.
pub fn raster_to_spike_times(raster: &SpikeRaster) -> Vec<Vec<f64>> {
    (0..raster.n_neurons)
        .map(|i| {
            (0..raster.n_bins).filter(|&t| raster.spin(i, t) == 1).map(|t| (t as f64 + 0.5) * raster.bin_ms).collect()
        })
        .collect()
}
