//! Time grids, discretized trajectories and the physical parameters shared by
//! every other module.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Particle, Result};
use crate::numerics::{norm_sq, time_derivative, trapezoid_weights};

/// Uniform grid `t_j = j * dt` on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

/// Builds a uniform grid with `n + 1` nodes spanning `[0, horizon]`.
pub fn make_grid(horizon: f64, n: usize) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidGrid(format!(
            "at least 2 steps are required, got {n}"
        )));
    }
    Ok(TimeGrid {
        horizon,
        n_steps: n,
    })
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// The last node is pinned to the horizon exactly.
    pub fn node(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(self.len(), self.dt())
    }
}

/// A discretized path `q_a(t_j)` stored node-major (`values[j * dim + i]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    fixed_start: bool,
    fixed_end: bool,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Dimension(format!(
                "spatial dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::Dimension(format!(
                "expected {} values for {} nodes in {} dimensions, got {}",
                grid.len() * dim,
                grid.len(),
                dim,
                values.len()
            )));
        }
        Ok(Trajectory {
            grid,
            dim,
            values,
            fixed_start: true,
            fixed_end: true,
        })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for t in grid.nodes() {
            let q = f(t);
            if q.len() != dim {
                return Err(Error::Dimension(format!(
                    "path function returned {} components, expected {dim}",
                    q.len()
                )));
            }
            values.extend(q);
        }
        Trajectory::new(grid, dim, values)
    }

    /// Constant-velocity path between two points.
    pub fn straight(grid: TimeGrid, start: &[f64], end: &[f64]) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::Dimension(format!(
                "endpoints have {} and {} components",
                start.len(),
                end.len()
            )));
        }
        let horizon = grid.horizon();
        Trajectory::from_fn(grid, start.len(), |t| {
            let s = t / horizon;
            start
                .iter()
                .zip(end)
                .map(|(a, b)| a + (b - a) * s)
                .collect()
        })
    }

    pub fn with_fixed_ends(mut self, start: bool, end: bool) -> Self {
        self.fixed_start = start;
        self.fixed_end = end;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn endpoints_fixed(&self) -> (bool, bool) {
        (self.fixed_start, self.fixed_end)
    }

    /// Velocity field by second-order finite differences.
    pub fn velocity(&self) -> Result<Vec<f64>> {
        velocity(self)
    }

    /// Same path traversed backwards on the same grid.
    pub fn reversed(&self) -> Trajectory {
        let mut values = Vec::with_capacity(self.values.len());
        for j in (0..self.len()).rev() {
            values.extend_from_slice(self.point(j));
        }
        Trajectory {
            values,
            fixed_start: self.fixed_end,
            fixed_end: self.fixed_start,
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.dim {
            header.push_str(&format!(",q{i}"));
        }
        writeln!(out, "{header}")?;
        for j in 0..self.len() {
            let mut line = format_f64(self.grid.node(j));
            for x in self.point(j) {
                line.push(',');
                line.push_str(&format_f64(*x));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the `t,q1[,q2,q3]` format. Times must lie on a uniform grid
    /// starting at zero.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv("empty file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let dim = cols.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=dim).map(|i| format!("q{i}")))
            .collect();
        if !(1..=3).contains(&dim) || cols != expected {
            return Err(Error::Csv(format!("unexpected header `{}`", header.trim())));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Csv(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    fields.len(),
                    dim + 1
                )));
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|f| f.trim().parse::<f64>()).collect();
            let parsed = parsed.map_err(|e| Error::Csv(format!("row {}: {e}", row + 1)))?;
            times.push(parsed[0]);
            values.extend_from_slice(&parsed[1..]);
        }
        if times.len() < 3 {
            return Err(Error::Csv(format!(
                "{} rows, at least 3 required",
                times.len()
            )));
        }
        let n = times.len() - 1;
        let grid = make_grid(times[n], n)?;
        let tol = 1e-9 * grid.horizon();
        for (j, t) in times.iter().enumerate() {
            if (t - grid.node(j)).abs() > tol {
                return Err(Error::Csv(format!(
                    "row {} time {t} is off the uniform grid (expected {})",
                    j + 1,
                    grid.node(j)
                )));
            }
        }
        Trajectory::new(grid, dim, values)
    }
}

/// Shortest text that keeps 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Central differences inside, one-sided second-order differences at the ends.
pub fn velocity(traj: &Trajectory) -> Result<Vec<f64>> {
    time_derivative(&traj.values, traj.dim, traj.grid.dt())
}

/// Coordinates and momenta on one particle's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseField {
    q: Trajectory,
    p: Vec<f64>,
}

impl PhaseField {
    pub fn new(q: Trajectory, p: Vec<f64>) -> Result<Self> {
        if p.len() != q.values().len() {
            return Err(Error::Dimension(format!(
                "momentum field has {} entries, coordinates have {}",
                p.len(),
                q.values().len()
            )));
        }
        Ok(PhaseField { q, p })
    }

    pub fn q(&self) -> &Trajectory {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn p_mut(&mut self) -> &mut [f64] {
        &mut self.p
    }

    pub fn q_mut(&mut self) -> &mut Trajectory {
        &mut self.q
    }

    pub fn grid(&self) -> &TimeGrid {
        self.q.grid()
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }
}

/// Masses, the coupling product `e1 e2`, horizons and regularization width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub m1: f64,
    pub m2: f64,
    pub coupling: f64,
    pub t1: f64,
    pub t2: f64,
    pub sigma: f64,
    pub dim: usize,
}

impl SystemParams {
    pub fn mass(&self, particle: Particle) -> f64 {
        match particle {
            Particle::One => self.m1,
            Particle::Two => self.m2,
        }
    }

    pub fn horizon(&self, particle: Particle) -> f64 {
        match particle {
            Particle::One => self.t1,
            Particle::Two => self.t2,
        }
    }

    /// Same system with the particle labels exchanged.
    pub fn swapped(&self) -> SystemParams {
        SystemParams {
            m1: self.m2,
            m2: self.m1,
            t1: self.t2,
            t2: self.t1,
            ..*self
        }
    }

    pub fn with_coupling(&self, coupling: f64) -> SystemParams {
        SystemParams { coupling, ..*self }
    }

    /// Parameter-only invariant violations.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (particle, m) in [(Particle::One, self.m1), (Particle::Two, self.m2)] {
            if !(m > 0.0) || !m.is_finite() {
                out.push(Violation::NonPositiveMass { particle, mass: m });
            }
        }
        for (particle, t) in [(Particle::One, self.t1), (Particle::Two, self.t2)] {
            if !(t > 0.0) || !t.is_finite() {
                out.push(Violation::NonPositiveHorizon {
                    particle,
                    horizon: t,
                });
            }
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            out.push(Violation::InvalidRegularization { sigma: self.sigma });
        }
        if !self.coupling.is_finite() {
            out.push(Violation::NonFiniteCoupling {
                coupling: self.coupling,
            });
        }
        if !(1..=3).contains(&self.dim) {
            out.push(Violation::BadDimension { dim: self.dim });
        }
        out
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Superluminal {
        particle: Particle,
        node: usize,
        speed: f64,
    },
    GridMismatch {
        particle: Particle,
        grid_horizon: f64,
        param_horizon: f64,
    },
    DimensionMismatch {
        particle: Particle,
        trajectory_dim: usize,
        param_dim: usize,
    },
    InvalidRegularization {
        sigma: f64,
    },
    NonPositiveMass {
        particle: Particle,
        mass: f64,
    },
    NonPositiveHorizon {
        particle: Particle,
        horizon: f64,
    },
    NonFiniteCoupling {
        coupling: f64,
    },
    BadDimension {
        dim: usize,
    },
    NonFiniteCoordinate {
        particle: Particle,
        node: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Superluminal {
                particle,
                node,
                speed,
            } => write!(
                f,
                "superluminal velocity {speed} on {particle} at node {node}"
            ),
            Violation::GridMismatch {
                particle,
                grid_horizon,
                param_horizon,
            } => write!(
                f,
                "{particle} grid spans {grid_horizon} but its horizon is {param_horizon}"
            ),
            Violation::DimensionMismatch {
                particle,
                trajectory_dim,
                param_dim,
            } => write!(
                f,
                "{particle} trajectory has dimension {trajectory_dim}, parameters say {param_dim}"
            ),
            Violation::InvalidRegularization { sigma } => {
                write!(f, "invalid regularization: sigma = {sigma} must be > 0")
            }
            Violation::NonPositiveMass { particle, mass } => {
                write!(f, "mass of {particle} must be > 0, got {mass}")
            }
            Violation::NonPositiveHorizon { particle, horizon } => {
                write!(f, "horizon of {particle} must be > 0, got {horizon}")
            }
            Violation::NonFiniteCoupling { coupling } => {
                write!(f, "coupling must be finite, got {coupling}")
            }
            Violation::BadDimension { dim } => {
                write!(f, "spatial dimension must be 1, 2 or 3, got {dim}")
            }
            Violation::NonFiniteCoordinate { particle, node } => {
                write!(f, "non-finite coordinate on {particle} at node {node}")
            }
        }
    }
}

/// Collects every invariant violation instead of stopping at the first.
pub fn validate(
    params: &SystemParams,
    traj1: &Trajectory,
    traj2: &Trajectory,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = params.violations();
    for (particle, traj) in [(Particle::One, traj1), (Particle::Two, traj2)] {
        let horizon = params.horizon(particle);
        if (traj.grid().horizon() - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
            out.push(Violation::GridMismatch {
                particle,
                grid_horizon: traj.grid().horizon(),
                param_horizon: horizon,
            });
        }
        if traj.dim() != params.dim {
            out.push(Violation::DimensionMismatch {
                particle,
                trajectory_dim: traj.dim(),
                param_dim: params.dim,
            });
        }
        if let Some(j) = (0..traj.len()).find(|&j| traj.point(j).iter().any(|x| !x.is_finite())) {
            out.push(Violation::NonFiniteCoordinate { particle, node: j });
            continue;
        }
        // Grids always carry at least three nodes, so this cannot fail.
        if let Ok(v) = traj.velocity() {
            for (j, vj) in v.chunks(traj.dim()).enumerate() {
                let speed = norm_sq(vj).sqrt();
                if speed >= 1.0 {
                    out.push(Violation::Superluminal {
                        particle,
                        node: j,
                        speed,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub(crate) fn validated(
    params: &SystemParams,
    traj1: &Trajectory,
    traj2: &Trajectory,
) -> Result<()> {
    validate(params, traj1, traj2).map_err(Error::Validation)
}
