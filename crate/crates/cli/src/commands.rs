use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use isingdyn::active::{active_learn, find_m_star_active, ActiveConfig, GlauberOracle};
use isingdyn::dynamics::{run_m_regime, run_t_regime_with_burn_in, InitialDistribution};
use isingdyn::experiments::{beta_sweep, clambda_sweep, find_m_star, write_sweep_csv, MStarSpec, SweepRow};
use isingdyn::model::{build_topology, model_stats};
use isingdyn::neural::{self, bin_spikes, read_spike_csv, run_pipeline, synthetic_raster, NeuralConfig, SpikeRaster};
use isingdyn::reconstruction::{
    learn_structure, structure_success, threshold_edges, CouplingMatrixEstimate, EdgeSetEstimate,
};
use isingdyn::rng::{stream, Purpose};
use isingdyn::{Estimator, IsingModel, NeighborhoodEstimate, Regime, RegularizationConfig, SampleSet};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{block, resolve_c_lambda, GraphFamily, NeuralSource, RunConfig};
use crate::Failure;

struct Run<'a> {
    command: &'static str,
    cfg: &'a RunConfig,
    dir: PathBuf,
    start: Instant,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    master_seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    threads: usize,
    outputs: &'a [String],
    wall_clock_s: f64,
    summary: serde_json::Value,
}

impl<'a> Run<'a> {
    fn new(command: &'static str, cfg: &'a RunConfig) -> Result<Self, Failure> {
        let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { command, cfg, dir, start: Instant::now(), outputs: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Resolved config (replayable with `--config`) and the manifest.
    fn finish(mut self, summary: serde_json::Value) -> Result<(), Failure> {
        let resolved = self.cfg.to_toml()?;
        let mut w = self.create("config.toml")?;
        w.write_all(resolved.as_bytes())?;
        w.flush()?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            master_seed: self.cfg.master_seed,
            config_sha256: format!("{:x}", Sha256::digest(resolved.as_bytes())),
            config: self.cfg,
            threads: rayon::current_num_threads(),
            outputs: &self.outputs,
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            summary,
        };
        let path = self.dir.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn write_couplings(w: impl Write, c: &CouplingMatrixEstimate) -> Result<(), Failure> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["i", "j", "J"])?;
    for (i, j, v) in c.to_rows() {
        wtr.write_record([i.to_string(), j.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct NodeDiagnostics<'a> {
    #[serde(flatten)]
    estimate: &'a NeighborhoodEstimate,
    lambda: f64,
    m_u: usize,
    kkt_residual: f64,
}

fn write_estimates(
    w: impl Write,
    est: &[NeighborhoodEstimate],
    lambdas: &[f64],
    samples: &SampleSet,
) -> Result<(), Failure> {
    let mut w = w;
    for (e, &lambda) in est.iter().zip(lambdas) {
        let d = NodeDiagnostics { estimate: e, lambda, m_u: samples.count(e.node), kkt_residual: e.kkt_residual };
        serde_json::to_writer(&mut w, &d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<IsingModel, Failure> {
    IsingModel::load(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn generate(cfg: &RunConfig) -> Result<(), Failure> {
    let g = block(&cfg.generate, "generate")?;
    let model = match &g.model {
        Some(p) => load_model(p)?,
        None => build_topology(cfg.topology()?)?,
    };
    let mut rng = stream(cfg.master_seed, Purpose::Samples, &[]);
    let samples = match g.regime {
        Regime::T => run_t_regime_with_burn_in(&model, &InitialDistribution::Uniform, g.m, g.burn_in, &mut rng)?,
        Regime::M => run_m_regime(&model, &InitialDistribution::Uniform, g.m, &mut rng)?,
    };
    let mut run = Run::new("generate", cfg)?;
    let mut w = run.create("model.json")?;
    w.write_all((model.to_json()? + "\n").as_bytes())?;
    w.flush()?;
    let mut w = run.create("samples.jsonl")?;
    samples.write_jsonl(&mut w)?;
    w.flush()?;
    run.finish(serde_json::json!({
        "n": model.n(),
        "edges": model.num_edges(),
        "m": samples.len(),
        "per_node_counts": samples.per_node_counts(),
    }))
}

pub fn learn(cfg: &RunConfig) -> Result<(), Failure> {
    let l = block(&cfg.learn, "learn")?;
    let samples = SampleSet::load(&l.samples).map_err(|e| Failure::data(format!("{}: {e}", l.samples.display())))?;
    let truth = l.model.as_deref().map(load_model).transpose()?;
    let lattice = match l.family {
        Some(f) => Some(f == GraphFamily::Lattice),
        None => cfg.topology.as_ref().map(|t| t.graph.is_lattice()),
    };
    let c = resolve_c_lambda(l.c_lambda, lattice, samples.regime(), l.estimator)?;
    let alpha = match (l.alpha, &truth) {
        (Some(a), _) => a,
        (None, Some(m)) => model_stats(m)?.alpha,
        (None, None) => return Err(Failure::config("learn: missing field `alpha` (or a `model` to take it from)")),
    };
    let reg = RegularizationConfig { count: l.lambda_count, ..RegularizationConfig::new(c) };
    let fit = learn_structure(&samples, &reg, &l.solver, alpha, l.estimator)?;
    let mut run = Run::new("learn", cfg)?;
    write_couplings(run.create("couplings.csv")?, &fit.couplings)?;
    run.json("edges.json", &fit.edges)?;
    write_estimates(run.create("estimates.jsonl")?, &fit.estimates, &fit.lambdas, &samples)?;
    let success = truth.as_ref().map(|m| structure_success(&fit.edges, m));
    run.finish(serde_json::json!({
        "estimator": l.estimator.to_string(),
        "c_lambda": c,
        "alpha": alpha,
        "edges": fit.edges.len(),
        "converged": fit.estimates.iter().all(|e| e.converged),
        "matches_model": success,
    }))
}

fn mstar_spec(cfg: &RunConfig) -> Result<MStarSpec, Failure> {
    let b = block(&cfg.mstar, "mstar")?;
    let topology = cfg.topology()?.clone();
    let c = resolve_c_lambda(b.c_lambda, Some(topology.graph.is_lattice()), b.regime, b.estimator)?;
    Ok(MStarSpec {
        topology,
        regime: b.regime,
        estimator: b.estimator,
        reg: RegularizationConfig::new(c),
        solver: b.solver,
        consecutive_successes: b.consecutive_successes,
        m_grid: b.m_grid,
        master_seed: cfg.master_seed,
        burn_in: b.burn_in,
    })
}

pub fn mstar(cfg: &RunConfig) -> Result<(), Failure> {
    let b = block(&cfg.mstar, "mstar")?;
    let spec = mstar_spec(cfg)?;
    let res = if b.active {
        if spec.regime != Regime::M || spec.estimator != Estimator::DRise {
            return Err(Failure::config("active m* runs need regime = \"M\" and estimator = \"drise\""));
        }
        find_m_star_active(&spec, b.i_max)?
    } else {
        find_m_star(&spec)?
    };
    let mut run = Run::new("mstar", cfg)?;
    run.json("mstar.json", &res)?;
    let mut wtr = csv::Writer::from_writer(run.create("levels.csv")?);
    for l in &res.levels {
        wtr.serialize(l)?;
    }
    wtr.flush()?;
    write_sweep_csv(&[SweepRow::new(&spec, &res)], run.create("sweep.csv")?)?;
    let found = res.m_star;
    run.finish(serde_json::json!({ "m_star": found, "bounded_failure": res.bounded_failure() }))?;
    match found {
        Some(_) => Ok(()),
        None => Err(Failure {
            code: Failure::SEARCH,
            message: format!("no sample size up to m_max = {} met the success criterion", spec.m_grid.m_max),
        }),
    }
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let s = block(&cfg.sweep, "sweep")?;
    let spec = mstar_spec(cfg)?;
    match (&s.betas, &s.c_lambdas) {
        (Some(betas), None) => {
            let res = beta_sweep(&spec, betas)?;
            let mut run = Run::new("sweep", cfg)?;
            let rows: Vec<SweepRow> = res.runs.iter().map(|r| SweepRow::new(&spec.with_beta(r.beta), r)).collect();
            write_sweep_csv(&rows, run.create("sweep.csv")?)?;
            run.json("sweep.json", &res)?;
            run.finish(serde_json::json!({ "slope": res.fit.slope, "d": res.d }))
        }
        (None, Some(cs)) => {
            let res = clambda_sweep(&spec, cs)?;
            let mut run = Run::new("sweep", cfg)?;
            let mut wtr = csv::Writer::from_writer(run.create("sweep.csv")?);
            wtr.write_record(["c_lambda", "m_star"])?;
            for (c, m) in &res.table {
                wtr.write_record([c.to_string(), m.map(|m| m.to_string()).unwrap_or_default()])?;
            }
            wtr.flush()?;
            run.json("sweep.json", &res)?;
            run.finish(serde_json::json!({ "best": res.best, "best_m_star": res.best_m_star }))
        }
        _ => Err(Failure::config("[sweep] needs exactly one of `betas` or `c_lambdas`")),
    }
}

pub fn active(cfg: &RunConfig) -> Result<(), Failure> {
    let a = block(&cfg.active, "active")?;
    let topology = cfg.topology()?;
    let model = build_topology(topology)?;
    let alpha = model_stats(&model)?.alpha;
    let c = resolve_c_lambda(a.c_lambda, Some(topology.graph.is_lattice()), Regime::M, Estimator::DRise)?;
    let mut ac = ActiveConfig::from_budget(a.m, a.i_max, a.initial_fraction, RegularizationConfig::new(c))?;
    ac.solver = a.solver;
    ac.force_uniform = a.force_uniform;
    let mut oracle = GlauberOracle::new(&model, stream(cfg.master_seed, Purpose::Oracle, &[]));
    let out = active_learn(&mut oracle, &ac, &mut stream(cfg.master_seed, Purpose::Queries, &[]))?;
    let couplings = isingdyn::reconstruction::average_couplings(&out.estimates)?;
    let edges: EdgeSetEstimate = threshold_edges(&couplings, alpha)?;
    let mut run = Run::new("active", cfg)?;
    let mut w = run.create("rounds.jsonl")?;
    out.write_log(&mut w)?;
    w.flush()?;
    let mut w = run.create("samples.jsonl")?;
    out.samples.write_jsonl(&mut w)?;
    w.flush()?;
    write_couplings(run.create("couplings.csv")?, &couplings)?;
    run.json("edges.json", &edges)?;
    run.finish(serde_json::json!({
        "samples": out.samples.len(),
        "initial": ac.initial,
        "m_b": ac.m_b,
        "rounds": out.rounds.len(),
        "matches_model": structure_success(&edges, &model),
    }))
}

pub fn neural(cfg: &RunConfig) -> Result<(), Failure> {
    let nb = block(&cfg.neural, "neural")?;
    let raster = match &nb.source {
        NeuralSource::Spikes { path, duration_ms } => {
            let f = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            bin_spikes(&read_spike_csv(f, None)?, *duration_ms, nb.bin_ms)?
        }
        NeuralSource::Raster { path } => {
            let f = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            SpikeRaster::read_csv(f, nb.bin_ms)?
        }
        NeuralSource::Synthetic { runs, steps, model } => {
            let m = match model {
                Some(p) => load_model(p)?,
                None => neural::closed_loop_model(),
            };
            synthetic_raster(&m, *runs, *steps, nb.bin_ms, &mut stream(cfg.master_seed, Purpose::Fixture, &[]))?
        }
    };
    let raster = match &nb.neurons {
        Some(sel) => raster.select(sel)?,
        None => raster,
    };
    let nc = NeuralConfig {
        gap_bins: nb.gap_bins,
        threshold_override: nb.threshold,
        ..NeuralConfig::new(nb.c_lambda, nb.m_sim)
    };
    let out = run_pipeline(&raster, &nc, &mut stream(cfg.master_seed, Purpose::Simulation, &[]))?;
    let mut run = Run::new("neural", cfg)?;
    run.json("report.json", &out.report)?;
    out.iid.write_csv(run.create("corr_iid.csv")?)?;
    out.time.write_csv(run.create("corr_time.csv")?)?;
    out.predicted.write_csv(run.create("corr_pred.csv")?)?;
    let mut wtr = csv::Writer::from_writer(run.create("corr_diff.csv")?);
    wtr.write_record(["i", "j", "data", "predicted", "diff"])?;
    for i in 0..out.time.n {
        for j in 0..out.time.n {
            let (d, p) = (out.time.get(i, j), out.predicted.get(i, j));
            wtr.write_record([i.to_string(), j.to_string(), d.to_string(), p.to_string(), (p - d).to_string()])?;
        }
    }
    wtr.flush()?;
    let mut w = run.create("estimates.jsonl")?;
    for e in &out.estimates {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    run.finish(serde_json::json!({
        "extracted": out.report.extraction.extracted,
        "threshold": out.report.threshold,
        "kept_edges": out.report.kept_edges.len(),
        "predicted_vs_data": out.report.predicted_vs_data,
    }))
}
