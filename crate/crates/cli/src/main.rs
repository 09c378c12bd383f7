use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use unicurrent::experiment::{
    run_and_persist, ExperimentConfig, ExperimentKind, MomentsConfig, Tolerances, UnitsConfig, ZenoConfig,
};
use unicurrent::{Error, SurvivalLaw};

const OUT_DIR_ENV: &str = "UNICURRENT_OUT_DIR";

/// Runs unicurrent experiments from JSON configs and writes CSV/JSON
/// artifacts. Precedence: flags > config > defaults.
#[derive(Debug, Parser)]
#[command(name = "unicurrent", version, about)]
struct Cli {
    /// Output directory [default: $UNICURRENT_OUT_DIR, else the working directory]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for Monte Carlo runs
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative quadrature tolerance
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run whatever experiment the config describes
    Run {
        config: PathBuf,
    },
    /// Parse and validate a config, print its hash
    ValidateConfig {
        config: PathBuf,
    },
    /// ψ(y, t+Δt) on a grid and the mass pushed past the edge
    Propagate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        delta_t: Option<f64>,
    },
    /// Sweep Δt or α and fit the power law of the mass outside
    SweepDt {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Mass beyond distance c from the support edge
    MassBeyond {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        delta_t: Option<f64>,
        /// Distance c beyond the support edge (repeatable)
        #[arg(long = "distance")]
        distances: Vec<f64>,
    },
    /// Feynman-limit vs Schrödinger current, or J_LR at the edge
    Current {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// One-way and net diffusion fluxes at finite Δt
    DiffusionFlux {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Monte Carlo survival against an absorbing point
    SimulateAbsorbing {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Survival statistics of N repeated observations
    Zeno {
        #[command(flatten)]
        cfg: ConfigArg,
        /// ZENO_3_2 or ANTIZENO_1_2
        #[arg(long)]
        law: Option<String>,
        #[arg(long)]
        prefactor: Option<f64>,
        #[arg(long)]
        total_time: Option<f64>,
        /// Number of observations (repeatable)
        #[arg(long = "n")]
        n: Vec<u64>,
    },
    /// Gaussian moment identities
    Moments {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Gaussian width (repeatable)
        #[arg(long = "sigma")]
        sigmas: Vec<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) => 2,
        Error::Validation(_) => 3,
        Error::InvalidArgument(_) | Error::ConvergenceFailure { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse(_) => "parse",
        Error::Validation(_) => "validation",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::ConvergenceFailure { .. } => "convergence-failure",
        Error::Io(_) => "io",
    }
}

fn bare(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        units: UnitsConfig::default(),
        wavefunction: None,
        delta_t: None,
        distances: None,
        grid: None,
        sweep: None,
        current: None,
        diffusion: None,
        zeno: None,
        moments: None,
        tolerances: Tolerances::default(),
        seed: 0,
        output: Default::default(),
    }
}

fn load(path: Option<&Path>, kind: ExperimentKind) -> Result<ExperimentConfig, Error> {
    let Some(path) = path else {
        return Ok(bare(kind));
    };
    let cfg = ExperimentConfig::from_path(path)?;
    if cfg.kind != kind {
        return Err(Error::Validation(format!(
            "config describes a {} experiment, not {}",
            cfg.kind.name(),
            kind.name()
        )));
    }
    Ok(cfg)
}

fn parse_law(s: &str) -> Result<SurvivalLaw, Error> {
    serde_json::from_value(json!(s)).map_err(|_| Error::Parse(format!("unknown law {s:?}")))
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.command {
        Command::Run { config } | Command::ValidateConfig { config } => ExperimentConfig::from_path(config)?,
        Command::Propagate { cfg, delta_t } => {
            let mut c = load(cfg.config.as_deref(), ExperimentKind::Propagate)?;
            c.delta_t = delta_t.or(c.delta_t);
            c
        }
        Command::SweepDt { cfg } => load(cfg.config.as_deref(), ExperimentKind::SweepDt)?,
        Command::MassBeyond {
            cfg,
            delta_t,
            distances,
        } => {
            let mut c = load(cfg.config.as_deref(), ExperimentKind::MassBeyond)?;
            c.delta_t = delta_t.or(c.delta_t);
            if !distances.is_empty() {
                c.distances = Some(distances.clone());
            }
            c
        }
        Command::Current { cfg } => load(cfg.config.as_deref(), ExperimentKind::Current)?,
        Command::DiffusionFlux { cfg } => load(cfg.config.as_deref(), ExperimentKind::DiffusionFlux)?,
        Command::SimulateAbsorbing { cfg, paths } => {
            let mut c = load(cfg.config.as_deref(), ExperimentKind::SimulateAbsorbing)?;
            if let (Some(p), Some(sim)) = (paths, c.diffusion.as_mut().and_then(|d| d.simulation.as_mut())) {
                sim.n_paths = *p;
            }
            c
        }
        Command::Zeno {
            cfg,
            law,
            prefactor,
            total_time,
            n,
        } => {
            let mut c = load(cfg.config.as_deref(), ExperimentKind::Zeno)?;
            let base = c.zeno.clone().unwrap_or(ZenoConfig {
                law: SurvivalLaw::Zeno32,
                prefactor: 0.1,
                total_time: 1.0,
                n: vec![1, 4, 16, 64, 256, 1024, 4096],
            });
            c.zeno = Some(ZenoConfig {
                law: match law {
                    Some(s) => parse_law(s)?,
                    None => base.law,
                },
                prefactor: prefactor.unwrap_or(base.prefactor),
                total_time: total_time.unwrap_or(base.total_time),
                n: if n.is_empty() { base.n } else { n.clone() },
            });
            c
        }
        Command::Moments { cfg, sigmas } => {
            let mut c = load(cfg.config.as_deref(), ExperimentKind::Moments)?;
            if !sigmas.is_empty() {
                c.moments = Some(MomentsConfig { sigmas: sigmas.clone() });
            }
            c
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.tol {
        cfg.tolerances.rel_tol = t;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn execute(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    let cfg = build_config(cli)?;
    cfg.validate()?;
    if let Command::ValidateConfig { .. } = cli.command {
        println!("valid kind={} config-hash={}", cfg.kind.name(), cfg.config_hash());
        return Ok(());
    }
    let report = run_and_persist(&cfg, &out_dir(cli, &cfg))?;
    println!("{}", report.summary_line());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let body = json!({
                "error": error_kind(&e),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
