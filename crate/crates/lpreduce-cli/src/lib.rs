//! Command-line front end for the symmetry-reduction engine.
//!
//! Three commands over the registered systems (`so2-bead`, `so3-two-vector`,
//! `gauge-lattice`):
//!
//! * `run` — integrate the reduced equations, write a CSV trajectory and a
//!   versioned invariant report;
//! * `validate` — evaluate the geometric-identity and route-equality suites
//!   at seeded random points, no integration;
//! * `compare` — diff two trajectory files sharing a time grid.
//!
//! All orchestration is single-threaded; the `LPREDUCE_THREADS` environment
//! variable caps the worker count and is validated on every invocation.

use std::fmt;

pub mod cli;
pub mod config;
pub mod report;
pub mod runner;
pub mod sample;
pub mod traj;

/// A command failure, tagged with its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config, or input files: exit 2.
    Usage(String),
    /// A solver failure or an I/O error mid-computation: exit 1.
    Numeric(String),
    /// Trajectories do not share a comparable grid: exit 3.
    GridMismatch(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 1,
            Failure::GridMismatch(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) | Failure::Numeric(msg) | Failure::GridMismatch(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl std::error::Error for Failure {}
