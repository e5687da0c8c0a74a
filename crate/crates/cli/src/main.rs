//! `isingdyn`: generate Glauber samples, learn structure, and run the
//! sample-complexity, active learning and spike-train experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isingdyn::{Estimator, Regime};

#[derive(Debug, Parser)]
#[command(name = "isingdyn", version, about = "Structure learning of Ising models from Glauber dynamics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` in the config.
    #[arg(long, global = true, env = "ISINGDYN_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a model and draw samples from its dynamics.
    Generate {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Fit every neighborhood and threshold the averaged couplings.
    Learn {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        estimator: Option<Estimator>,
        #[arg(long)]
        c_lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Smallest sample size with a run of consecutive successes.
    Mstar {
        #[arg(long)]
        estimator: Option<Estimator>,
        #[arg(long)]
        regime: Option<Regime>,
        #[arg(long)]
        c_lambda: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// m* over a list of β or c_λ values.
    Sweep,
    /// One active learning run against simulated dynamics.
    Active {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        c_lambda: Option<f64>,
    },
    /// Parse a config, build its topology, and print it with defaults
    /// filled in.
    Check,
    /// Spike-train pipeline: extract, fit, threshold, predict correlations.
    Neural {
        #[arg(long)]
        c_lambda: Option<f64>,
        #[arg(long)]
        m_sim: Option<usize>,
    },
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const SEARCH: u8 = 4;

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: Self::CONFIG, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: Self::DATA, message: message.into() }
    }
}

impl From<isingdyn::Error> for Failure {
    fn from(e: isingdyn::Error) -> Self {
        use isingdyn::Error::*;
        let code = match e {
            InvalidConfig(_)
            | InvalidTopology(_)
            | InvalidModel(_)
            | InvalidDistribution(_)
            | TooLargeForEnumeration { .. } => Self::CONFIG,
            SearchExhausted { .. } => Self::SEARCH,
            DimensionMismatch { .. }
            | IndexOutOfRange { .. }
            | EdgelessModel
            | NoUpdates { .. }
            | InvalidData(_)
            | Oracle { .. } => Self::DATA,
            Csv(_) | Io(_) | Json(_) => Self::DATA,
            Internal(_) => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli.common.config.as_ref().ok_or_else(|| Failure::config("--config is required"))?;
    let (mut cfg, _) = config::RunConfig::load(path)?;
    if let Some(dir) = cli.common.output_dir {
        cfg.output_dir = Some(dir);
    }
    if let Some(seed) = cli.common.seed {
        cfg.master_seed = seed;
    }
    if let Some(t) = cli.common.threads {
        cfg.thread_count = t;
    }
    if cfg.thread_count > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.thread_count)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate { m, regime } => {
            let g = cfg.generate.as_mut().ok_or_else(|| Failure::config("config has no [generate] block"))?;
            if let Some(m) = m {
                g.m = m;
            }
            if let Some(r) = regime {
                g.regime = r;
            }
            commands::generate(&cfg)
        }
        Command::Learn { samples, estimator, c_lambda, alpha } => {
            let l = cfg.learn.as_mut().ok_or_else(|| Failure::config("config has no [learn] block"))?;
            if let Some(s) = samples {
                l.samples = s;
            }
            if let Some(e) = estimator {
                l.estimator = e;
            }
            l.c_lambda = c_lambda.or(l.c_lambda);
            l.alpha = alpha.or(l.alpha);
            commands::learn(&cfg)
        }
        Command::Mstar { estimator, regime, c_lambda, beta } => {
            let b = cfg.mstar.as_mut().ok_or_else(|| Failure::config("config has no [mstar] block"))?;
            if let Some(e) = estimator {
                b.estimator = e;
            }
            if let Some(r) = regime {
                b.regime = r;
            }
            b.c_lambda = c_lambda.or(b.c_lambda);
            if let Some(beta) = beta {
                let t = cfg.topology.as_mut().ok_or_else(|| Failure::config("config has no [topology] block"))?;
                t.beta_value = beta;
            }
            commands::mstar(&cfg)
        }
        Command::Sweep => commands::sweep(&cfg),
        Command::Check => {
            if let Some(t) = &cfg.topology {
                isingdyn::model::build_topology(t)?;
            }
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Active { m, c_lambda } => {
            let a = cfg.active.as_mut().ok_or_else(|| Failure::config("config has no [active] block"))?;
            if let Some(m) = m {
                a.m = m;
            }
            a.c_lambda = c_lambda.or(a.c_lambda);
            commands::active(&cfg)
        }
        Command::Neural { c_lambda, m_sim } => {
            let nb = cfg.neural.as_mut().ok_or_else(|| Failure::config("config has no [neural] block"))?;
            if let Some(c) = c_lambda {
                nb.c_lambda = c;
            }
            if let Some(m) = m_sim {
                nb.m_sim = m;
            }
            commands::neural(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
