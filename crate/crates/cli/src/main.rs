//! `gluesim` — harmonic-glue Langevin sampling engine.
//!
//! Subcommands: `run` (generate trajectories), `analyze` (trajectory
//! observables), `diagnose` (error-theory check suites).
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or config error,
//! 3 I/O error.

mod analyze;
mod config;
mod diagnose;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "gluesim",
    version,
    about = "Harmonic-glue Langevin sampling engine"
)]
struct Cli {
    /// Configuration file (TOML with typed sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all counter-based random streams.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output directory; falls back to GLUESIM_OUT_DIR, then the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sampler and write trajectory files plus a manifest.
    Run,
    /// Compute observables from a trajectory file.
    Analyze {
        /// Trajectory file produced by `run`.
        #[arg(long)]
        traj: PathBuf,
        /// Radius-of-gyration series (requires 3N coordinates).
        #[arg(long)]
        rg: bool,
        /// Autocorrelation of one coordinate column.
        #[arg(long)]
        acf_col: Option<usize>,
        /// Circular autocorrelation of one angular coordinate column.
        #[arg(long)]
        angle_acf_col: Option<usize>,
        /// Maximum lag for autocorrelation tables.
        #[arg(long, default_value_t = 128)]
        max_lag: usize,
        /// Pearson correlation matrix across replicas of one coordinate.
        #[arg(long)]
        corr_coord: Option<usize>,
        /// Pearson correlation matrix across replica terminal frames using
        /// aligned flattened coordinates.
        #[arg(long)]
        corr_frames: bool,
        /// Pairwise RMSD matrix across replica terminal frames
        /// (raw | centered | aligned).
        #[arg(long)]
        dist_matrix: Option<String>,
    },
    /// Run a named check suite and report pass/fail per check.
    Diagnose {
        /// One of: kl-budget, weak-order, stationary-bias, mh-acceptance,
        /// noise-fusion, refinement.
        #[arg(long)]
        suite: String,
    },
}

pub(crate) struct Ctx {
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("GLUESIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx {
        config_path: cli.config,
        seed: cli.seed,
        workers: cli.workers,
        out_dir,
    };

    let result = match cli.command {
        Command::Run => run::cmd_run(&ctx),
        Command::Analyze {
            traj,
            rg,
            acf_col,
            angle_acf_col,
            max_lag,
            corr_coord,
            corr_frames,
            dist_matrix,
        } => analyze::cmd_analyze(
            &ctx,
            &traj,
            analyze::AnalyzeSpec {
                rg,
                acf_col,
                angle_acf_col,
                max_lag,
                corr_coord,
                corr_frames,
                dist_matrix,
            },
        ),
        Command::Diagnose { suite } => diagnose::cmd_diagnose(&ctx, &suite),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let msg = format!("{e:#}");
            if msg.contains("config error")
                || msg.contains("unknown field")
                || msg.contains("usage error")
            {
                ExitCode::from(2)
            } else if e
                .chain()
                .any(|c| c.downcast_ref::<std::io::Error>().is_some())
                || msg.contains("reading ")
                || msg.contains("writing ")
                || msg.contains("creating ")
            {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

pub(crate) fn load_config(ctx: &Ctx) -> anyhow::Result<config::RunConfig> {
    let path = ctx
        .config_path
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config error: --config is required for this command"))?;
    config::RunConfig::load(path)
}
