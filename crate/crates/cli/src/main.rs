mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gridcfc::config::ExperimentConfig;
use gridcfc::exec::Workers;

use commands::{execute, NumericalFailure};
use manifest::{file_digest, Invocation, OutputFile, RunManifest, Timing};

/// Cascading-failure chain sampling, branch-interaction ranking and
/// upgrade validation for transmission grids.
///
/// Configuration keys can be overridden with GRIDCFC_<SECTION>__<KEY>
/// environment variables, e.g. GRIDCFC_SIMULATION__N_SAMPLES=500.
#[derive(Parser)]
#[command(name = "gridcfc", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Case file, MATPOWER `.m` or native JSON.
    #[arg(long, env = "GRIDCFC_CASE")]
    case: PathBuf,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, env = "GRIDCFC_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, env = "GRIDCFC_SEED")]
    seed: Option<u64>,
    /// Number of sampled chains, overriding the config.
    #[arg(long, env = "GRIDCFC_SAMPLES")]
    samples: Option<usize>,
    /// Worker threads, 0 for all cores. Results do not depend on it.
    #[arg(long, env = "GRIDCFC_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, env = "GRIDCFC_OUT")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample cascading failure chains and report the load-loss risk.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Build the branch-interaction graph of a batch and rank its branches.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Line-delimited records written by `simulate`.
        #[arg(long)]
        batch: PathBuf,
    },
    /// Score branches by a structural metric.
    Structural {
        #[command(flatten)]
        common: Common,
        /// B1, B2, B3 or all; repeatable.
        #[arg(long, default_value = "all")]
        metric: Vec<String>,
    },
    /// Compare capacity upgrades chosen from rankings.
    Validate {
        #[command(flatten)]
        common: Common,
        /// self: top, middle and bottom groups of one ranking; cross: top group of each ranking.
        #[arg(long, value_parser = ["self", "cross"])]
        mode: String,
        /// Ranking CSV files with rank and branch columns; repeatable.
        #[arg(long, required = true)]
        ranking: Vec<PathBuf>,
        /// Curve labels, one per ranking file.
        #[arg(long, value_delimiter = ',')]
        names: Vec<String>,
    },
    /// Repeat a run from its manifest.
    Rerun {
        manifest: PathBuf,
        /// Output directory; defaults to the original one.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Print the default configuration as TOML.
    Defaults,
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref()).context("loading config")?;
    if let Some(seed) = common.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(n) = common.samples {
        cfg.simulation.n_samples = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_and_record(inv: Invocation, cfg: ExperimentConfig, out: &Path, workers: usize) -> Result<()> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let outcome = execute(&inv, &cfg, out, Workers(workers))?;
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| Ok(OutputFile { path: p.clone(), sha256: file_digest(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: inv,
        case_hash: outcome.case_hash,
        seed: cfg.simulation.seed,
        workers,
        config: cfg,
        outputs,
        timing: Timing {
            started,
            elapsed_s: clock.elapsed().as_secs_f64(),
        },
    };
    manifest.write(out)?;
    match outcome.failure {
        Some(f) => Err(f.into()),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = config(&common)?;
            let inv = Invocation::Simulate { case: common.case.clone() };
            run_and_record(inv, cfg, &common.out, common.workers)
        }
        Command::Rank { common, batch } => {
            let cfg = config(&common)?;
            let inv = Invocation::Rank {
                case: common.case.clone(),
                batch,
            };
            run_and_record(inv, cfg, &common.out, common.workers)
        }
        Command::Structural { common, metric } => {
            let cfg = config(&common)?;
            commands::parse_metrics(&metric)?;
            let inv = Invocation::Structural {
                case: common.case.clone(),
                metrics: metric,
            };
            run_and_record(inv, cfg, &common.out, common.workers)
        }
        Command::Validate {
            common,
            mode,
            ranking,
            names,
        } => {
            let cfg = config(&common)?;
            let inv = Invocation::Validate {
                case: common.case.clone(),
                mode,
                rankings: ranking,
                names,
            };
            run_and_record(inv, cfg, &common.out, common.workers)
        }
        Command::Rerun { manifest, out, workers } => {
            let m = RunManifest::read(&manifest)?;
            m.config.validate()?;
            let dir = out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
            run_and_record(m.invocation, m.config, &dir, workers)
        }
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml()?);
            Ok(())
        }
    }
}

/// 1 for results that missed a numerical tolerance, 2 for bad input.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<NumericalFailure>().is_some() {
        return 1;
    }
    match e.downcast_ref::<gridcfc::Error>() {
        Some(gridcfc::Error::SingularSusceptance(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
