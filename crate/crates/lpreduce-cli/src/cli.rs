//! Argument definitions and dispatch.
//!
//! Exit codes: `0` all checks pass, `1` a numeric check failed or a solver
//! gave up, `2` usage error, `3` comparison grid mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::{config, runner, Failure};

#[derive(Parser)]
#[command(
    name = "lpreduce",
    version,
    about = "Symmetry-reduced dynamics: integrate, validate invariants, compare trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Integrate a system and write a trajectory plus an invariant report.
    Run(CommonArgs),
    /// Evaluate the invariant and route-equality suites without integrating.
    Validate(CommonArgs),
    /// Compare two trajectory files on a shared time grid.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Built-in system name (so2-bead, so3-two-vector, gauge-lattice) or a
    /// path to a JSON config file.
    #[arg(long)]
    pub system: Option<String>,

    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Integration horizon.
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,

    /// Fixed integrator step.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Output directory for the trajectory and report.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Seed for every random draw; fixed seed means byte-identical outputs.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Which reduced equations to integrate.
    #[arg(long = "equation-set", value_parser = ["full", "special"])]
    pub equation_set: Option<String>,

    /// Lattice spatial dimension (gauge-lattice only).
    #[arg(long)]
    pub dim: Option<usize>,

    /// Lattice sites per axis (gauge-lattice only).
    #[arg(long)]
    pub size: Option<usize>,

    /// Lattice structure group: so2 or su2 (gauge-lattice only).
    #[arg(long)]
    pub group: Option<String>,

    /// Multiply every tolerance by this factor (0 makes every check fail).
    #[arg(long = "tolerance-scale")]
    pub tolerance_scale: Option<f64>,

    /// Sample points for the mechanical validation suite.
    #[arg(long)]
    pub points: Option<usize>,

    /// Random states for the gauge-lattice validation suite.
    #[arg(long)]
    pub states: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    /// First trajectory CSV.
    pub traj_a: PathBuf,

    /// Second trajectory CSV.
    pub traj_b: PathBuf,

    /// Largest allowed relative deviation per column group.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,

    /// Multiply the tolerance by this factor (0 makes every check fail).
    #[arg(long = "tolerance-scale", default_value_t = 1.0)]
    pub tolerance_scale: f64,

    /// Optional directory for a report file (the report always prints).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Run(args) => runner::cmd_run(&config::resolve(&args)?),
        Command::Validate(args) => runner::cmd_validate(&config::resolve(&args)?),
        Command::Compare(args) => {
            // Verify the thread cap even though compare never spawns workers,
            // so a malformed environment fails loudly everywhere.
            config::threads_from_env()?;
            runner::cmd_compare(
                &args.traj_a,
                &args.traj_b,
                args.tolerance,
                args.tolerance_scale,
                args.out.as_deref(),
            )
        }
    }
}

/// Entry point shared by the binary.
pub fn main_entry() -> ExitCode {
    // Clap handles usage errors itself with exit code 2.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
