//! Sample-complexity protocols: the `m*` search, β-sweeps with
//! log-linear exponent fits, and `c_λ` selection.
//!
//! `m*` is the smallest size on a geometric grid at which a fixed number of
//! consecutive independent trials all reconstruct the edge set exactly.
//! Trial `t` at size `m` draws its samples from the stream
//! `(master_seed, Samples, [bits(β), m, t])`, so every level is replayable
//! on its own.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_m_regime, run_t_regime_with_burn_in, InitialDistribution, Regime, SampleSet};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, RegularizationConfig, SolverConfig};
use crate::model::{build_topology, model_stats, IsingModel, TopologySpec};
use crate::reconstruction::{learn_structure, structure_success};
use crate::rng::{self, Purpose};

/// Consecutive successes required by the long-running protocol.
pub const FULL_CONSECUTIVE_SUCCESSES: usize = 45;
pub const DESK_CONSECUTIVE_SUCCESSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MGrid {
    /// First grid value; `100 n` when absent.
    pub start: Option<usize>,
    pub factor: f64,
    pub m_max: usize,
    /// One bisection between the last failing and first passing level.
    pub bisect: bool,
}

impl Default for MGrid {
    fn default() -> Self {
        Self { start: None, factor: 1.3, m_max: 10_000_000, bisect: true }
    }
}

impl MGrid {
    /// Grid values `start · factor^k` (rounded up), strictly increasing and
    /// not above `m_max`.
    pub fn values(&self, n: usize) -> Vec<usize> {
        let start = self.start.unwrap_or(100 * n).max(1);
        let mut out = Vec::new();
        let mut x = start as f64;
        while (x.ceil() as usize) <= self.m_max {
            let v = x.ceil() as usize;
            if out.last().is_none_or(|&l| v > l) {
                out.push(v);
            }
            x *= self.factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStarSpec {
    pub topology: TopologySpec,
    pub regime: Regime,
    pub estimator: Estimator,
    pub reg: RegularizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_consecutive")]
    pub consecutive_successes: usize,
    #[serde(default)]
    pub m_grid: MGrid,
    pub master_seed: u64,
    /// Discarded Glauber steps before recording (T-regime only).
    #[serde(default)]
    pub burn_in: usize,
}

fn default_consecutive() -> usize {
    DESK_CONSECUTIVE_SUCCESSES
}

impl MStarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.consecutive_successes == 0 {
            return Err(Error::InvalidConfig("consecutive_successes must be at least 1".into()));
        }
        if !(self.m_grid.factor > 1.0) {
            return Err(Error::InvalidConfig(format!("grid factor must exceed 1, got {}", self.m_grid.factor)));
        }
        self.reg.validate()?;
        self.solver.validate()
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { topology: self.topology.with_beta(beta), ..self.clone() }
    }

    pub fn with_c_lambda(&self, c: f64) -> Self {
        Self { reg: RegularizationConfig { c_lambda: c, ..self.reg }, ..self.clone() }
    }
}

/// Outcome of one grid level: trials run in order until the first failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub m: usize,
    pub successes: usize,
    pub trials_run: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStarResult {
    /// `None` when no level up to `m_max` passed.
    pub m_star: Option<usize>,
    pub m_i_mean: Option<f64>,
    pub n: usize,
    pub beta: f64,
    pub levels: Vec<LevelRecord>,
    /// Largest size that was tried and failed.
    pub last_failure: Option<usize>,
}

impl MStarResult {
    pub fn bounded_failure(&self) -> bool {
        self.m_star.is_none()
    }
}

/// Samples for trial `trial` at size `m`.
pub fn trial_samples(spec: &MStarSpec, model: &IsingModel, m: usize, trial: usize) -> Result<SampleSet> {
    let mut r = rng::stream(
        spec.master_seed,
        Purpose::Samples,
        &[rng::key_f64(spec.topology.beta_value), m as u64, trial as u64],
    );
    let p0 = InitialDistribution::Uniform;
    match spec.regime {
        Regime::T => run_t_regime_with_burn_in(model, &p0, m, spec.burn_in, &mut r),
        Regime::M => run_m_regime(model, &p0, m, &mut r),
    }
}

/// Whether one trial reconstructs the edge set. A node without updates
/// counts as a failure.
pub fn run_trial(spec: &MStarSpec, model: &IsingModel, alpha: f64, m: usize, trial: usize) -> Result<bool> {
    let samples = trial_samples(spec, model, m, trial)?;
    match learn_structure(&samples, &spec.reg, &spec.solver, alpha, spec.estimator) {
        Ok(fit) => Ok(structure_success(&fit.edges, model)),
        Err(Error::NoUpdates { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Run trials `first, first+1, ...` until one fails or `count` succeed.
/// Trials are evaluated in parallel chunks; the record counts the
/// successes before the first failure in trial order.
fn run_level<F>(trial: &F, m: usize, first: usize, count: usize) -> Result<LevelRecord>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    let chunk = rayon::current_num_threads().max(1);
    let mut successes = 0;
    let mut next = first;
    while successes < count {
        let take = chunk.min(count - successes);
        let outcomes = (next..next + take).into_par_iter().map(|t| trial(m, t)).collect::<Result<Vec<bool>>>()?;
        next += take;
        for ok in outcomes {
            if !ok {
                return Ok(LevelRecord { m, successes, trials_run: successes + 1, passed: false });
            }
            successes += 1;
        }
    }
    Ok(LevelRecord { m, successes, trials_run: successes, passed: true })
}

/// The grid search with a caller-supplied trial `(m, trial_index) -> success`.
pub fn find_m_star_with<F>(spec: &MStarSpec, n: usize, trial: F) -> Result<MStarResult>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    spec.validate()?;
    let k = spec.consecutive_successes;
    let mut levels = Vec::new();
    let mut last_failure = None;
    let mut m_star = None;
    for m in spec.m_grid.values(n) {
        let rec = run_level(&trial, m, 0, k)?;
        log::info!("beta {} m {}: {}/{} passed", spec.topology.beta_value, m, rec.successes, k);
        let passed = rec.passed;
        levels.push(rec);
        if passed {
            m_star = Some(m);
            break;
        }
        last_failure = Some(m);
    }
    if let (Some(hi), Some(lo), true) = (m_star, last_failure, spec.m_grid.bisect) {
        let mid = lo + (hi - lo) / 2;
        if mid > lo && mid < hi {
            let rec = run_level(&trial, mid, 0, k)?;
            if rec.passed {
                m_star = Some(mid);
            } else {
                last_failure = Some(mid);
            }
            levels.push(rec);
        }
    }
    Ok(MStarResult {
        m_star,
        m_i_mean: m_star.map(|m| m as f64 / n as f64),
        n,
        beta: spec.topology.beta_value,
        levels,
        last_failure,
    })
}

pub fn find_m_star(spec: &MStarSpec) -> Result<MStarResult> {
    spec.validate()?;
    let model = build_topology(&spec.topology)?;
    let alpha = model_stats(&model)?.alpha;
    find_m_star_with(spec, model.n(), |m, t| run_trial(spec, &model, alpha, m, t))
}

/// Fraction of `trials` fresh trials (indices from `offset`) that succeed at `m`.
pub fn success_rate(spec: &MStarSpec, m: usize, trials: usize, offset: usize) -> Result<f64> {
    let model = build_topology(&spec.topology)?;
    let alpha = model_stats(&model)?.alpha;
    let ok = (offset..offset + trials)
        .into_par_iter()
        .map(|t| run_trial(spec, &model, alpha, m, t))
        .collect::<Result<Vec<bool>>>()?;
    Ok(ok.iter().filter(|&&b| b).count() as f64 / trials.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `ln m*`.
    pub residual: f64,
}

/// Least squares of `ln m*` on `d β`.
pub fn fit_exponent(betas: &[f64], m_stars: &[f64], d: f64) -> Result<ExponentFit> {
    if betas.len() != m_stars.len() {
        return Err(Error::DimensionMismatch { expected: betas.len(), got: m_stars.len() });
    }
    if betas.len() < 3 {
        return Err(Error::InvalidData(format!("need at least 3 points for a fit, got {}", betas.len())));
    }
    if m_stars.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidData("m* values must be positive".into()));
    }
    let xs: Vec<f64> = betas.iter().map(|b| d * b).collect();
    let ys: Vec<f64> = m_stars.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(Error::InvalidData("all beta values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(ExponentFit { slope, intercept, residual: (rss / k).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub beta_values: Vec<f64>,
    pub m_star_values: Vec<usize>,
    pub d: usize,
    /// Fitted over the upper half of the β range (at least 3 points).
    pub fit: ExponentFit,
    pub runs: Vec<MStarResult>,
}

/// The `k` largest-β points used for the fit: half the range, at least 3.
pub fn fit_window(len: usize) -> usize {
    len.div_ceil(2).max(3).min(len)
}

pub fn beta_sweep(base: &MStarSpec, betas: &[f64]) -> Result<ScalingResult> {
    if betas.len() < 3 {
        return Err(Error::InvalidConfig(format!("a beta sweep needs at least 3 values, got {}", betas.len())));
    }
    let mut sorted = betas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut runs = Vec::with_capacity(sorted.len());
    let mut m_stars = Vec::with_capacity(sorted.len());
    let mut d = 0;
    for &beta in &sorted {
        let spec = base.with_beta(beta);
        d = model_stats(&build_topology(&spec.topology)?)?.d;
        let res = find_m_star(&spec)?;
        match res.m_star {
            Some(m) => m_stars.push(m),
            None => return Err(Error::SearchExhausted { m_max: spec.m_grid.m_max }),
        }
        runs.push(res);
    }
    let w = fit_window(sorted.len());
    let lo = sorted.len() - w;
    let ms: Vec<f64> = m_stars[lo..].iter().map(|&m| m as f64).collect();
    let fit = fit_exponent(&sorted[lo..], &ms, d as f64)?;
    Ok(ScalingResult { beta_values: sorted, m_star_values: m_stars, d, fit, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClambdaSweep {
    pub best: f64,
    pub best_m_star: usize,
    /// Every candidate with its `m*` (`None` for a bounded failure).
    pub table: Vec<(f64, Option<usize>)>,
}

/// Candidate with the smallest `m*`; ties go to the smaller `c_λ`.
pub fn clambda_sweep(spec: &MStarSpec, c_values: &[f64]) -> Result<ClambdaSweep> {
    if c_values.len() < 2 {
        return Err(Error::InvalidConfig("a c_lambda sweep needs at least 2 candidates".into()));
    }
    let mut table = Vec::with_capacity(c_values.len());
    for &c in c_values {
        table.push((c, find_m_star(&spec.with_c_lambda(c))?.m_star));
    }
    let (best, best_m_star) = select_c_lambda(&table).ok_or(Error::SearchExhausted { m_max: spec.m_grid.m_max })?;
    Ok(ClambdaSweep { best, best_m_star, table })
}

pub fn select_c_lambda(table: &[(f64, Option<usize>)]) -> Option<(f64, usize)> {
    table.iter().filter_map(|&(c, m)| m.map(|m| (c, m))).min_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)))
}

/// One long-format CSV row per `(β, m*)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub topology: String,
    pub regime: String,
    pub estimator: String,
    pub c_lambda: f64,
    pub beta: f64,
    pub m_star: Option<usize>,
    pub m_i_mean: Option<f64>,
    pub trials: usize,
}

impl SweepRow {
    pub fn new(spec: &MStarSpec, res: &MStarResult) -> Self {
        Self {
            topology: topology_label(&spec.topology),
            regime: spec.regime.to_string(),
            estimator: spec.estimator.to_string(),
            c_lambda: spec.reg.c_lambda,
            beta: res.beta,
            m_star: res.m_star,
            m_i_mean: res.m_i_mean,
            trials: res.levels.iter().map(|l| l.trials_run).sum(),
        }
    }
}

pub fn topology_label(t: &TopologySpec) -> String {
    use crate::model::{CouplingPattern, GraphKind};
    let graph = match t.graph {
        GraphKind::PeriodicLattice { rows, cols } => format!("lattice{rows}x{cols}"),
        GraphKind::RandomRegular { n, degree, .. } => format!("rr{n}d{degree}"),
    };
    let pattern = match t.pattern {
        CouplingPattern::Ferromagnetic => "ferro",
        CouplingPattern::SpinGlass { .. } => "spinglass",
        CouplingPattern::FerroWithImpurity => "impurity",
    };
    format!("{graph}-{pattern}")
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingPattern, GraphKind};
    use approx::assert_abs_diff_eq;

    fn tiny_spec() -> MStarSpec {
        // Two nodes on a 1-regular graph: a single edge.
        MStarSpec {
            topology: TopologySpec {
                graph: GraphKind::RandomRegular { n: 2, degree: 1, seed: 0 },
                pattern: CouplingPattern::Ferromagnetic,
                beta_value: 0.4,
                alpha_value: 0.4,
                impurity_edges: vec![],
            },
            regime: Regime::M,
            estimator: Estimator::DRise,
            reg: RegularizationConfig::new(0.1),
            solver: SolverConfig::default(),
            consecutive_successes: 10,
            m_grid: MGrid { start: Some(20), m_max: 100_000, ..MGrid::default() },
            master_seed: 7,
            burn_in: 0,
        }
    }

    #[test]
    fn grid_is_geometric() {
        let g = MGrid { start: None, factor: 1.3, m_max: 3000, bisect: true };
        let v = g.values(16);
        assert_eq!(v, vec![1600, 2080, 2704]);
        assert!(MGrid { start: Some(1), factor: 1.3, m_max: 10, bisect: false }
            .values(2)
            .windows(2)
            .all(|w| w[1] > w[0]));
    }

    #[test]
    fn single_edge_m_star_is_small_and_replayable() {
        let spec = tiny_spec();
        let a = find_m_star(&spec).unwrap();
        let m = a.m_star.unwrap();
        assert!(m <= 10_000, "m* = {m}");
        assert_eq!(a.m_i_mean, Some(m as f64 / 2.0));
        let b = find_m_star(&spec).unwrap();
        assert_eq!(a, b);
        assert!(success_rate(&spec, m, 20, 1000).unwrap() >= 0.8);
    }

    #[test]
    fn bounded_failure_is_reported() {
        let mut spec = tiny_spec();
        spec.m_grid.start = Some(2);
        spec.m_grid.m_max = 4;
        let r = find_m_star(&spec).unwrap();
        assert!(r.bounded_failure());
        assert_eq!(r.last_failure, Some(4));
    }

    #[test]
    fn exponent_fits() {
        let betas = [0.5, 1.0, 1.5, 2.0];
        let m: Vec<f64> = betas.iter().map(|b| 7.0 * (2.0f64 * 4.0 * b).exp()).collect();
        let f = fit_exponent(&betas, &m, 4.0).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.intercept, 7f64.ln(), epsilon = 1e-9);
        let scaled: Vec<f64> = m.iter().map(|x| 13.0 * x).collect();
        assert_abs_diff_eq!(fit_exponent(&betas, &scaled, 4.0).unwrap().slope, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit_exponent(&betas, &[5.0; 4], 4.0).unwrap().slope, 0.0, epsilon = 1e-12);
        assert!(fit_exponent(&[1.0; 3], &[1.0, 2.0, 3.0], 4.0).is_err());
        assert!(fit_exponent(&[1.0, 2.0], &[1.0, 2.0], 4.0).is_err());
    }

    #[test]
    fn c_lambda_ties_go_low() {
        let table = [(0.3, Some(500)), (0.1, Some(400)), (0.2, Some(400)), (0.05, None)];
        assert_eq!(select_c_lambda(&table), Some((0.1, 400)));
        assert_eq!(select_c_lambda(&[(0.1, None)]), None);
    }

    #[test]
    fn fit_window_sizes() {
        assert_eq!(fit_window(3), 3);
        assert_eq!(fit_window(4), 3);
        assert_eq!(fit_window(8), 4);
        assert_eq!(fit_window(9), 5);
    }

    #[test]
    fn csv_rows() {
        let spec = tiny_spec();
        let res = MStarResult {
            m_star: Some(1300),
            m_i_mean: Some(650.0),
            n: 2,
            beta: 0.4,
            levels: vec![LevelRecord { m: 1300, successes: 10, trials_run: 10, passed: true }],
            last_failure: None,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[SweepRow::new(&spec, &res)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "topology,regime,estimator,c_lambda,beta,m_star,m_i_mean,trials\nrr2d1-ferro,M,drise,0.1,0.4,1300,650.0,10\n"
        );
    }
}
