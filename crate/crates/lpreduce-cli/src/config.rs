//! Run configuration: JSON config files merged with command-line flags.
//!
//! Precedence, lowest to highest: built-in defaults, the file named by
//! `--config`, the file named by `--system` when that value is a path rather
//! than a built-in name, then explicit flags. Every knob is optional at every
//! layer; the resolved [`RunConfig`] carries the final values.

use std::fmt;
use std::path::{Path, PathBuf};

use lpreduce_core::dynamics::EquationSet;
use lpreduce_core::lattice::{GaugeGroup, LatticeConfig};
use serde::Deserialize;

use crate::cli::CommonArgs;
use crate::Failure;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "LPREDUCE_THREADS";

/// Which registered system a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemChoice {
    So2Bead,
    So3TwoVector,
    GaugeLattice,
}

impl SystemChoice {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "so2-bead" => Some(Self::So2Bead),
            "so3-two-vector" => Some(Self::So3TwoVector),
            "gauge-lattice" => Some(Self::GaugeLattice),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::So2Bead => "so2-bead",
            Self::So3TwoVector => "so3-two-vector",
            Self::GaugeLattice => "gauge-lattice",
        }
    }

    pub const ALL: [SystemChoice; 3] =
        [Self::So2Bead, Self::So3TwoVector, Self::GaugeLattice];
}

impl fmt::Display for SystemChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// On-disk configuration schema (all keys optional, kebab-case).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub system: Option<String>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub equation_set: Option<String>,
    pub tolerance_scale: Option<f64>,
    /// Sample count for the mechanical validation suite.
    pub points: Option<usize>,
    /// Random-state count for the gauge-lattice validation suite.
    pub states: Option<usize>,
    pub lattice: Option<LatticeSection>,
}

/// Nested gauge-lattice block of the config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LatticeSection {
    pub dim: Option<usize>,
    pub size: Option<usize>,
    pub group: Option<String>,
    pub spacing: Option<f64>,
    pub scalar_mass2: Option<f64>,
    pub coupling: Option<f64>,
}

/// Fully resolved configuration for `run` and `validate`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemChoice,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub equation_set: EquationSet,
    pub tolerance_scale: f64,
    pub points: usize,
    pub states: usize,
    pub lattice: LatticeConfig,
    /// Effective worker-thread cap (orchestration is single-threaded, so the
    /// cap is reported but never exceeded by construction).
    pub threads: usize,
}

impl RunConfig {
    /// Number of integration steps implied by `t_end` and `dt`.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        usage(format!("cannot read config file `{}`: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid config file `{}`: {e}", path.display())))
}

fn merge(base: &mut FileConfig, over: FileConfig) {
    if over.system.is_some() {
        base.system = over.system;
    }
    if over.t_end.is_some() {
        base.t_end = over.t_end;
    }
    if over.dt.is_some() {
        base.dt = over.dt;
    }
    if over.seed.is_some() {
        base.seed = over.seed;
    }
    if over.out.is_some() {
        base.out = over.out;
    }
    if over.equation_set.is_some() {
        base.equation_set = over.equation_set;
    }
    if over.tolerance_scale.is_some() {
        base.tolerance_scale = over.tolerance_scale;
    }
    if over.points.is_some() {
        base.points = over.points;
    }
    if over.states.is_some() {
        base.states = over.states;
    }
    if let Some(sec) = over.lattice {
        let dst = base.lattice.get_or_insert_with(LatticeSection::default);
        if sec.dim.is_some() {
            dst.dim = sec.dim;
        }
        if sec.size.is_some() {
            dst.size = sec.size;
        }
        if sec.group.is_some() {
            dst.group = sec.group;
        }
        if sec.spacing.is_some() {
            dst.spacing = sec.spacing;
        }
        if sec.scalar_mass2.is_some() {
            dst.scalar_mass2 = sec.scalar_mass2;
        }
        if sec.coupling.is_some() {
            dst.coupling = sec.coupling;
        }
    }
}

/// Read the worker-thread cap from the environment.
pub fn threads_from_env() -> Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))),
        },
        Err(_) => Ok(1),
    }
}

/// Resolve the final configuration from flags, files, and the environment.
pub fn resolve(args: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut file = FileConfig::default();
    if let Some(path) = &args.config {
        merge(&mut file, load_file(path)?);
    }

    // `--system` accepts a built-in name or a path to a config file.
    let mut system_flag: Option<SystemChoice> = None;
    if let Some(raw) = &args.system {
        match SystemChoice::parse(raw) {
            Some(choice) => system_flag = Some(choice),
            None => {
                let path = Path::new(raw);
                if path.is_file() {
                    merge(&mut file, load_file(path)?);
                } else {
                    let names: Vec<&str> =
                        SystemChoice::ALL.iter().map(|s| s.name()).collect();
                    return Err(usage(format!(
                        "unknown system `{raw}`: expected one of {} or a config-file path",
                        names.join(", ")
                    )));
                }
            }
        }
    }

    let system = match system_flag {
        Some(choice) => choice,
        None => match &file.system {
            Some(name) => SystemChoice::parse(name).ok_or_else(|| {
                usage(format!("config file names unknown system `{name}`"))
            })?,
            None => {
                return Err(usage(
                    "no system selected: pass --system or set `system` in the config file",
                ))
            }
        },
    };

    let t_end = args.t_end.or(file.t_end).unwrap_or(1.0);
    let dt = args.dt.or(file.dt).unwrap_or(1e-3);
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(usage(format!("--t-end must be positive and finite, got {t_end}")));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(usage(format!("--dt must be positive and finite, got {dt}")));
    }
    if dt > t_end {
        return Err(usage(format!("--dt ({dt}) must not exceed --t-end ({t_end})")));
    }

    // Mechanical systems default to the projector-bearing full equations
    // (exact at every regular state); the lattice integrates the
    // projector-free set, which is the regime it is built for, and the
    // generic-engine route stays available through `validate`.
    let equation_set = match args.equation_set.clone().or(file.equation_set) {
        None => match system {
            SystemChoice::GaugeLattice => EquationSet::SpecialCase,
            _ => EquationSet::Full,
        },
        Some(raw) => match raw.as_str() {
            "full" if system == SystemChoice::GaugeLattice => {
                return Err(usage(
                    "gauge-lattice runs integrate the projector-free equations; \
                     use `validate` for the generic-engine route-equality checks",
                ))
            }
            "full" => EquationSet::Full,
            "special" => EquationSet::SpecialCase,
            other => {
                return Err(usage(format!(
                    "--equation-set must be `full` or `special`, got `{other}`"
                )))
            }
        },
    };

    let tolerance_scale = args.tolerance_scale.or(file.tolerance_scale).unwrap_or(1.0);
    if !tolerance_scale.is_finite() || tolerance_scale < 0.0 {
        return Err(usage(format!(
            "--tolerance-scale must be finite and non-negative, got {tolerance_scale}"
        )));
    }

    let points = args.points.or(file.points).unwrap_or(20);
    let states = args.states.or(file.states).unwrap_or(5);
    if points == 0 || states == 0 {
        return Err(usage("--points and --states must be at least 1"));
    }

    let mut lattice = LatticeConfig::default();
    let sec = file.lattice.unwrap_or_default();
    if let Some(d) = args.dim.or(sec.dim) {
        lattice.dim = d;
    }
    if let Some(l) = args.size.or(sec.size) {
        lattice.extent = l;
    }
    let group_raw = args.group.clone().or(sec.group);
    if let Some(g) = &group_raw {
        lattice.group = match g.as_str() {
            "so2" => GaugeGroup::So2,
            "su2" => GaugeGroup::Su2,
            other => {
                return Err(usage(format!(
                    "--group must be `so2` or `su2`, got `{other}`"
                )))
            }
        };
    }
    if let Some(h) = sec.spacing {
        lattice.spacing = h;
    }
    if let Some(m2) = sec.scalar_mass2 {
        lattice.scalar_mass2 = m2;
    }
    if let Some(g0) = sec.coupling {
        lattice.coupling = g0;
    }
    if system == SystemChoice::GaugeLattice {
        lattice
            .validate()
            .map_err(|e| usage(format!("invalid lattice configuration: {e}")))?;
    }

    Ok(RunConfig {
        system,
        t_end,
        dt,
        seed: args.seed.or(file.seed).unwrap_or(42),
        out: args
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("lpreduce-out")),
        equation_set,
        tolerance_scale,
        points,
        states,
        lattice,
        threads: threads_from_env()?,
    })
}
