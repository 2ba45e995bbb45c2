//! The `lqrep` command line: `replicate`, `verify`, `oracle` and `bonds`.

mod commands;
pub mod config;
mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{Check, COST_FLOOR, EPSILONS, KKT_TOLERANCE, PERTURBATIONS, SE_BAND};
pub use config::{Application, Config, ConfigError};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lqrep", version, about = "Optimal replication of terminal targets by linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the optimal control and write summary.json, paths.csv and trajectories.csv.
    Replicate(CommonArgs),
    /// Run the invariant suite and a refinement ladder; exits 2 on any failure.
    Verify(VerifyArgs),
    /// Compare exact lattice optima with the continuous-time cost.
    Oracle(OracleArgs),
    /// Build a short-rate curve from bond targets.
    Bonds(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides simulation.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Step counts of the refinement ladder, e.g. 64,256,1024.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lattice depths, e.g. 4,6,8,10.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
}

fn load(common: &CommonArgs) -> Result<Config, CliError> {
    let mut cfg = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    let common = match command {
        Command::Replicate(c) | Command::Bonds(c) => c,
        Command::Verify(v) => &v.common,
        Command::Oracle(o) => &o.common,
    };
    let mut cfg = load(common)?;
    match command {
        Command::Verify(VerifyArgs { ladder: Some(l), .. }) => {
            if l.len() < 2 || l.iter().any(|&s| s < 2) || l.windows(2).any(|p| p[1] <= p[0]) {
                return Err(CliError::Validation(
                    "--ladder needs at least two strictly increasing step counts, each at least 2".into(),
                ));
            }
            cfg.simulation.ladder = l.clone();
        }
        Command::Oracle(OracleArgs { depths: Some(d), .. }) => cfg.depths = d.clone(),
        _ => {}
    }
    let work = || match command {
        Command::Replicate(_) => commands::replicate(&cfg),
        Command::Verify(_) => commands::verify(&cfg),
        Command::Oracle(_) => commands::oracle(&cfg),
        Command::Bonds(_) => commands::bonds(&cfg),
    };
    match common.threads {
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Validation(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
