//! Run configuration: one JSON file, unknown keys rejected.

use std::path::{Path, PathBuf};

use fokker_core::quantum::{LatticeSpec, DEFAULT_DIM_CAP};
use fokker_core::solver::{Endpoints, JacobianMode, SolveConfig};
use fokker_core::trajectory::Violation;
use fokker_core::{make_grid, Error, SystemParams, TimeGrid};
use serde::{Deserialize, Serialize};

/// A coordinate given either as a scalar (1-D) or as a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Point {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Point::Scalar(x) => vec![*x],
            Point::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub q1_0: Point,
    #[serde(rename = "q1_T")]
    pub q1_t: Point,
    pub q2_0: Point,
    #[serde(rename = "q2_T")]
    pub q2_t: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_steps")]
    pub continuation_steps: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_tol() -> f64 {
    SolveConfig::default().tolerance
}

fn default_max_iter() -> usize {
    SolveConfig::default().max_iter
}

fn default_steps() -> usize {
    SolveConfig::default().continuation_steps
}

fn default_damping() -> f64 {
    SolveConfig::default().damping
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: default_tol(),
            max_iter: default_max_iter(),
            continuation_steps: default_steps(),
            damping: default_damping(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub nt: usize,
    pub nq: usize,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default = "default_dim_cap")]
    pub dim_cap: usize,
}

fn default_dim_cap() -> usize {
    DEFAULT_DIM_CAP
}

fn default_dim() -> usize {
    1
}

/// Everything a subcommand may need. Physics parameters have no defaults;
/// numerical knobs do, and the resolved values are echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub m1: f64,
    pub m2: f64,
    pub coupling: f64,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    pub n1: usize,
    pub n2: usize,
    pub sigma: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub endpoints: EndpointConfig,
    #[serde(default)]
    pub hbar_tilde: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Config failures, split by exit code: unreadable or malformed files are
/// usage errors, invariant violations are domain errors.
#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Parse(String),
    Invalid(Error),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(m) | ConfigError::Parse(m) => f.write_str(m),
            ConfigError::Invalid(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError::Invalid(e)
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        ConfigError::Parse(format!(
            "config parse error at line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    cfg.check()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text)
}

impl RunConfig {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            m1: self.m1,
            m2: self.m2,
            coupling: self.coupling,
            t1: self.t1,
            t2: self.t2,
            sigma: self.sigma,
            dim: self.dim,
        }
    }

    pub fn grids(&self) -> fokker_core::Result<(TimeGrid, TimeGrid)> {
        Ok((make_grid(self.t1, self.n1)?, make_grid(self.t2, self.n2)?))
    }

    pub fn endpoints(&self) -> Endpoints {
        Endpoints {
            q1_start: self.endpoints.q1_0.to_vec(),
            q1_end: self.endpoints.q1_t.to_vec(),
            q2_start: self.endpoints.q2_0.to_vec(),
            q2_end: self.endpoints.q2_t.to_vec(),
        }
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            tolerance: self.solver.tol,
            max_iter: self.solver.max_iter,
            continuation_steps: self.solver.continuation_steps,
            jacobian: JacobianMode::FiniteDifference,
            damping: self.solver.damping,
        }
    }

    /// Lattice spec for the quantum subcommands; needs `lattice` and
    /// `hbar_tilde`, and 1-D scalar endpoints.
    pub fn lattice_spec(&self) -> fokker_core::Result<LatticeSpec> {
        let lattice = self.lattice.as_ref().ok_or_else(|| {
            Error::InvalidArgument("quantum subcommands need a \"lattice\" section".into())
        })?;
        let hbar_tilde = self.hbar_tilde.ok_or_else(|| {
            Error::InvalidArgument("quantum subcommands need \"hbar_tilde\"".into())
        })?;
        let e = self.endpoints();
        let mut ends = [0.0; 4];
        for (slot, v) in ends
            .iter_mut()
            .zip([&e.q1_start, &e.q1_end, &e.q2_start, &e.q2_end])
        {
            if v.len() != 1 {
                return Err(Error::Dimension("the lattice is one-dimensional".into()));
            }
            *slot = v[0];
        }
        let spec = LatticeSpec {
            nt: lattice.nt,
            nq: lattice.nq,
            q_min: lattice.q_min,
            q_max: lattice.q_max,
            hbar_tilde,
            endpoints: ends,
            dim_cap: lattice.dim_cap,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Aggregated validation of every section present.
    pub fn check(&self) -> fokker_core::Result<()> {
        let violations: Vec<Violation> = self.params().violations();
        if let Some(sigma) = violations.iter().find_map(|v| match v {
            Violation::InvalidRegularization { sigma } => Some(*sigma),
            _ => None,
        }) {
            if violations.len() == 1 {
                return Err(Error::InvalidRegularization(sigma));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        for (name, n) in [("n1", self.n1), ("n2", self.n2)] {
            if n < 2 {
                return Err(Error::InvalidGrid(format!("{name} must be >= 2, got {n}")));
            }
        }
        let e = self.endpoints();
        for (name, v) in [
            ("q1_0", &e.q1_start),
            ("q1_T", &e.q1_end),
            ("q2_0", &e.q2_start),
            ("q2_T", &e.q2_end),
        ] {
            if v.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "endpoint {name} has {} components, dim is {}",
                    v.len(),
                    self.dim
                )));
            }
        }
        self.solve_config().check()?;
        if let Some(h) = self.hbar_tilde {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "hbar_tilde must be > 0, got {h}"
                )));
            }
        }
        if self.lattice.is_some() {
            self.lattice_spec()?;
        }
        Ok(())
    }
}
