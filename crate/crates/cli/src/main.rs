//! `msflow`: run minimizing-movement flows, check saved runs, and run
//! refinement studies.

mod check;
mod manifest;
mod refine;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes shared by the subcommands.
pub const EXIT_OK: u8 = 0;
/// Bad or missing inputs, or a run stopped by an error.
pub const EXIT_INPUT: u8 = 1;
/// `run`: at least one step fell back to its best scored candidate.
/// `check`: at least one check failed.
pub const EXIT_FLAGGED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "msflow", version, about = "Minimizing movements for perimeter plus nonlocal energies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a flow and write ledger, snapshots and manifest.
    Run(RunArgs),
    /// Check a saved run and write a report.
    Check(CheckArgs),
    /// Rerun at 1x, 2x, 4x resolution with h, h/2, h/4.
    Refine(RefineArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Initial set as PGM or `i,j,value` CSV.
    #[arg(long)]
    pub init: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the configured cell size instead of rescaling to unit mass.
    #[arg(long)]
    pub no_normalize: bool,
    /// Write the exact plan of this step as `plan_%06d.csv`; repeatable.
    #[arg(long, value_name = "N")]
    pub dump_plan: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Run directory holding `ledger.csv`.
    #[arg(long)]
    pub ledger: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    /// Output directory; level `k` runs in `level_k/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of levels, each doubling resolution and halving h.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(a) => run::cmd_run(&a),
        Command::Check(a) => check::cmd_check(&a),
        Command::Refine(a) => refine::cmd_refine(&a),
    };
    ExitCode::from(code)
}
