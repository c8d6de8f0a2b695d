//! Fixed-endpoint stationary trajectories of the two-charge action, and a
//! Newtonian Coulomb reference used as an oracle.
//!
//! The stationary point of the action is a saddle, so the solver finds roots
//! of the interior Euler-Lagrange residual with damped Newton steps rather
//! than minimizing anything.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{el_residual, el_residual_fields, ResidualReport};
use crate::error::{Error, Particle, Result};
use crate::numerics::norm_sq;
use crate::trajectory::{SystemParams, TimeGrid, Trajectory};

const JACOBIAN_STEP: f64 = 1e-6;
const MAX_BISECTIONS: usize = 6;
const MAX_BACKTRACKS: usize = 12;

/// Fixed start and end points of both particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub q1_start: Vec<f64>,
    pub q1_end: Vec<f64>,
    pub q2_start: Vec<f64>,
    pub q2_end: Vec<f64>,
}

impl Endpoints {
    fn of(&self, particle: Particle) -> (&[f64], &[f64]) {
        match particle {
            Particle::One => (&self.q1_start, &self.q1_end),
            Particle::Two => (&self.q2_start, &self.q2_end),
        }
    }

    /// Same endpoints with the particle labels exchanged.
    pub fn swapped(&self) -> Endpoints {
        Endpoints {
            q1_start: self.q2_start.clone(),
            q1_end: self.q2_end.clone(),
            q2_start: self.q1_start.clone(),
            q2_end: self.q1_end.clone(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        for (name, x) in [
            ("q1_start", &self.q1_start),
            ("q1_end", &self.q1_end),
            ("q2_start", &self.q2_start),
            ("q2_end", &self.q2_end),
        ] {
            if x.len() != dim {
                return Err(Error::Dimension(format!(
                    "endpoint {name} has {} components, expected {dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "endpoint {name} is not finite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    FiniteDifference,
    /// No analytic Jacobian is implemented; behaves as `FiniteDifference`.
    AnalyticIfAvailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tolerance: f64,
    pub max_iter: usize,
    pub continuation_steps: usize,
    pub jacobian: JacobianMode,
    pub damping: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tolerance: 1e-8,
            max_iter: 50,
            continuation_steps: 4,
            jacobian: JacobianMode::FiniteDifference,
            damping: 1.0,
        }
    }
}

impl SolveConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.continuation_steps < 1 {
            return Err(Error::InvalidArgument(
                "continuation_steps must be >= 1".into(),
            ));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionKind {
    Free,
    Newton,
    CoulombReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub coupling: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub trajectory1: Trajectory,
    pub trajectory2: Trajectory,
    pub residual: ResidualReport,
    pub trace: Vec<ContinuationStep>,
    pub kind: SolutionKind,
    /// Relative energy drift of the reference integrator.
    pub energy_drift: Option<f64>,
}

fn check_grids(grids: (&TimeGrid, &TimeGrid), params: &SystemParams) -> Result<()> {
    for (particle, grid) in [(Particle::One, grids.0), (Particle::Two, grids.1)] {
        let t = params.horizon(particle);
        if (grid.horizon() - t).abs() > 1e-12 * t.abs().max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "{particle} grid horizon {} differs from parameter horizon {t}",
                grid.horizon()
            )));
        }
    }
    let violations = params.violations();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(())
}

fn straight_line(
    grid: &TimeGrid,
    start: &[f64],
    end: &[f64],
    particle: Particle,
) -> Result<Trajectory> {
    let dq = start
        .iter()
        .zip(end)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let ratio = dq / grid.horizon();
    if !(ratio < 1.0) {
        return Err(Error::NoTimelikePath { particle, ratio });
    }
    let mut traj = Trajectory::straight(grid.clone(), start, end)?;
    let dim = start.len();
    let n = traj.len();
    traj.values_mut()[(n - 1) * dim..].copy_from_slice(end);
    Ok(traj)
}

/// Constant-velocity trajectories between the endpoints.
pub fn solve_free(
    endpoints: &Endpoints,
    grids: (&TimeGrid, &TimeGrid),
    params: &SystemParams,
) -> Result<Solution> {
    check_grids(grids, params)?;
    endpoints.check(params.dim)?;
    let (s1, e1) = endpoints.of(Particle::One);
    let (s2, e2) = endpoints.of(Particle::Two);
    let t1 = straight_line(grids.0, s1, e1, Particle::One)?;
    let t2 = straight_line(grids.1, s2, e2, Particle::Two)?;
    let free = params.with_coupling(0.0);
    let residual = el_residual(&t1, &t2, &free)?;
    Ok(Solution {
        trajectory1: t1,
        trajectory2: t2,
        trace: vec![ContinuationStep {
            coupling: 0.0,
            iterations: 0,
            residual: residual.sup_norm,
        }],
        residual,
        kind: SolutionKind::Free,
        energy_drift: None,
    })
}

/// Interior unknowns of both paths, particle 1 first.
struct Layout {
    dim: usize,
    n1: usize,
    n2: usize,
}

impl Layout {
    fn unknowns(&self) -> usize {
        (self.n1 - 2 + self.n2 - 2) * self.dim
    }

    fn gather(&self, t1: &Trajectory, t2: &Trajectory) -> Vec<f64> {
        let d = self.dim;
        let mut x = t1.values()[d..(self.n1 - 1) * d].to_vec();
        x.extend_from_slice(&t2.values()[d..(self.n2 - 1) * d]);
        x
    }

    fn scatter(&self, x: &[f64], t1: &mut Trajectory, t2: &mut Trajectory) {
        let d = self.dim;
        let split = (self.n1 - 2) * d;
        t1.values_mut()[d..(self.n1 - 1) * d].copy_from_slice(&x[..split]);
        t2.values_mut()[d..(self.n2 - 1) * d].copy_from_slice(&x[split..]);
    }

    fn interior(&self, r1: &[f64], r2: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut r = r1[d..(self.n1 - 1) * d].to_vec();
        r.extend_from_slice(&r2[d..(self.n2 - 1) * d]);
        r
    }
}

struct Problem<'a> {
    layout: Layout,
    base1: &'a Trajectory,
    base2: &'a Trajectory,
}

impl Problem<'_> {
    fn residual(&self, x: &[f64], params: &SystemParams) -> Result<Vec<f64>> {
        let mut t1 = self.base1.clone();
        let mut t2 = self.base2.clone();
        self.layout.scatter(x, &mut t1, &mut t2);
        let (r1, r2) = el_residual_fields(&t1, &t2, params)?;
        Ok(self.layout.interior(&r1, &r2))
    }

    /// Central-difference Jacobian, one column per unknown.
    fn jacobian(&self, x: &[f64], params: &SystemParams) -> Result<DMatrix<f64>> {
        let n = x.len();
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let h = JACOBIAN_STEP * (1.0 + x[i].abs());
                let mut xp = x.to_vec();
                xp[i] = x[i] + h;
                let plus = self.residual(&xp, params)?;
                xp[i] = x[i] - h;
                let minus = self.residual(&xp, params)?;
                Ok(plus
                    .iter()
                    .zip(&minus)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(n, n, |r, c| columns[c][r]))
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

enum NewtonOutcome {
    Converged {
        x: Vec<f64>,
        iterations: usize,
        residual: f64,
    },
    Failed {
        history: Vec<f64>,
    },
}

fn newton(
    problem: &Problem,
    mut x: Vec<f64>,
    params: &SystemParams,
    config: &SolveConfig,
) -> Result<NewtonOutcome> {
    let mut r = match problem.residual(&x, params) {
        Ok(r) => r,
        Err(Error::Superluminal { .. }) => return Ok(NewtonOutcome::Failed { history: vec![] }),
        Err(e) => return Err(e),
    };
    let mut norm = sup(&r);
    let mut history = vec![norm];
    for it in 0..config.max_iter {
        if norm <= config.tolerance {
            return Ok(NewtonOutcome::Converged {
                x,
                iterations: it,
                residual: norm,
            });
        }
        let jac = problem.jacobian(&x, params);
        let jac = match jac {
            Ok(j) => j,
            Err(Error::Superluminal { .. }) => return Ok(NewtonOutcome::Failed { history }),
            Err(e) => return Err(e),
        };
        let dx = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::Singular("Newton step of the Euler-Lagrange system".into()))?;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(
                "Newton step of the Euler-Lagrange system".into(),
            ));
        }
        let mut step = config.damping;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a - step * d).collect();
            match problem.residual(&trial, params) {
                Ok(rt) => {
                    let nt = sup(&rt);
                    if nt < norm {
                        x = trial;
                        r = rt;
                        norm = nt;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::Superluminal { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        history.push(norm);
        if !accepted {
            return Ok(NewtonOutcome::Failed { history });
        }
    }
    if norm <= config.tolerance {
        return Ok(NewtonOutcome::Converged {
            x,
            iterations: config.max_iter,
            residual: norm,
        });
    }
    Ok(NewtonOutcome::Failed { history })
}

/// Damped Newton on the interior Euler-Lagrange residuals, continued
/// geometrically in the coupling from the free solution.
pub fn solve_el(
    endpoints: &Endpoints,
    grids: (&TimeGrid, &TimeGrid),
    params: &SystemParams,
    config: &SolveConfig,
) -> Result<Solution> {
    config.check()?;
    let free = solve_free(endpoints, grids, params)?;
    let layout = Layout {
        dim: params.dim,
        n1: grids.0.len(),
        n2: grids.1.len(),
    };
    if layout.unknowns() == 0 {
        return Err(Error::InsufficientResolution {
            nodes: layout.n1.min(layout.n2),
        });
    }
    let problem = Problem {
        layout,
        base1: &free.trajectory1,
        base2: &free.trajectory2,
    };
    let target = params.coupling;
    let mut pending: Vec<f64> = if target == 0.0 {
        vec![0.0]
    } else {
        (1..=config.continuation_steps)
            .rev()
            .map(|k| target * 0.5f64.powi((config.continuation_steps - k) as i32))
            .collect()
    };
    // consumed from the back, smallest coupling first
    let mut x = problem.layout.gather(&free.trajectory1, &free.trajectory2);
    let mut current = 0.0;
    let mut trace = Vec::new();
    let mut bisections = 0;
    while let Some(c) = pending.pop() {
        let step_params = params.with_coupling(c);
        match newton(&problem, x.clone(), &step_params, config)? {
            NewtonOutcome::Converged {
                x: xn,
                iterations,
                residual,
            } => {
                x = xn;
                current = c;
                trace.push(ContinuationStep {
                    coupling: c,
                    iterations,
                    residual,
                });
            }
            NewtonOutcome::Failed { history } => {
                if bisections == MAX_BISECTIONS {
                    let reached: Vec<String> =
                        trace.iter().map(|s| format!("{:e}", s.coupling)).collect();
                    return Err(Error::Divergence {
                        what: format!(
                            "Newton iteration at coupling {c:e} (continuation reached [{}])",
                            reached.join(", ")
                        ),
                        iterations: history.len().saturating_sub(1),
                        last: history.last().copied().unwrap_or(f64::NAN),
                        history,
                    });
                }
                bisections += 1;
                pending.push(c);
                pending.push(0.5 * (current + c));
            }
        }
    }
    let mut t1 = free.trajectory1.clone();
    let mut t2 = free.trajectory2.clone();
    problem.layout.scatter(&x, &mut t1, &mut t2);
    let residual = el_residual(&t1, &t2, params)?;
    if !(residual.sup_norm <= config.tolerance) {
        return Err(Error::Divergence {
            what: "post-verification of the Euler-Lagrange residual".into(),
            iterations: trace.iter().map(|s| s.iterations).sum(),
            last: residual.sup_norm,
            history: trace.iter().map(|s| s.residual).collect(),
        });
    }
    Ok(Solution {
        trajectory1: t1,
        trajectory2: t2,
        residual,
        trace,
        kind: SolutionKind::Newton,
        energy_drift: None,
    })
}

/// Newtonian two-body state: positions then velocities of both particles.
struct TwoBody {
    dim: usize,
    m1: f64,
    m2: f64,
    half_c: f64,
}

impl TwoBody {
    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let (x1, rest) = y.split_at(d);
        let (x2, rest) = rest.split_at(d);
        let (v1, v2) = rest.split_at(d);
        let r: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
        let dist = norm_sq(&r).sqrt();
        // V = (e1e2/2)/|x1 - x2|, force on 1 is -dV/dx1
        let scale = self.half_c / (dist * dist * dist);
        out[..d].copy_from_slice(v1);
        out[d..2 * d].copy_from_slice(v2);
        for i in 0..d {
            out[2 * d + i] = scale * r[i] / self.m1;
            out[3 * d + i] = -scale * r[i] / self.m2;
        }
    }

    fn energy(&self, y: &[f64]) -> (f64, f64) {
        let d = self.dim;
        let r: Vec<f64> = (0..d).map(|i| y[i] - y[d + i]).collect();
        let kinetic =
            0.5 * self.m1 * norm_sq(&y[2 * d..3 * d]) + 0.5 * self.m2 * norm_sq(&y[3 * d..]);
        let potential = if self.half_c == 0.0 {
            0.0
        } else {
            self.half_c / norm_sq(&r).sqrt()
        };
        (kinetic + potential, kinetic.abs() + potential.abs())
    }
}

// Dormand-Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const RK_RTOL: f64 = 1e-12;
const RK_ATOL: f64 = 1e-14;

/// Adaptive Dormand-Prince integration from `t0` to `t1`, landing exactly on `t1`.
fn integrate(sys: &TwoBody, y: &mut [f64], t0: f64, t1: f64, h: &mut f64) -> Result<()> {
    let n = y.len();
    let mut t = t0;
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::Divergence {
                what: "reference integrator step control".into(),
                iterations: steps,
                last: *h,
                history: vec![],
            });
        }
        let hh = h.min(t1 - t);
        sys.rhs(y, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in DP_A[s][..s].iter().enumerate() {
                    acc += a * k[j][i];
                }
                stage[i] = y[i] + hh * acc;
            }
            let (_, tail) = k.split_at_mut(s);
            sys.rhs(&stage, &mut tail[0]);
        }
        let mut err = 0.0f64;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut y5 = 0.0;
            let mut y4 = 0.0;
            for s in 0..7 {
                y5 += DP_B5[s] * k[s][i];
                y4 += DP_B4[s] * k[s][i];
            }
            next[i] = y[i] + hh * y5;
            let scale = RK_ATOL + RK_RTOL * y[i].abs().max(next[i].abs());
            err = err.max((hh * (y5 - y4)).abs() / scale);
        }
        if !err.is_finite() {
            return Err(Error::Divergence {
                what: "reference integrator (non-finite state)".into(),
                iterations: steps,
                last: err,
                history: vec![],
            });
        }
        if err <= 1.0 {
            t = if hh == t1 - t { t1 } else { t + hh };
            y.copy_from_slice(&next);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        *h = hh * factor;
    }
    Ok(())
}

struct Shot {
    samples: Vec<Vec<f64>>,
    drift: f64,
}

/// Integrates from the initial state, recording the state at each time.
fn shoot(sys: &TwoBody, y0: &[f64], times: &[f64]) -> Result<Shot> {
    let mut y = y0.to_vec();
    let mut h = 1e-3 * times.last().copied().unwrap_or(1.0);
    let (e0, scale0) = sys.energy(&y);
    let mut drift = 0.0f64;
    let mut samples = vec![y.clone()];
    for w in times.windows(2) {
        integrate(sys, &mut y, w[0], w[1], &mut h)?;
        let (e, scale) = sys.energy(&y);
        drift = drift.max((e - e0).abs() / scale0.max(scale).max(f64::MIN_POSITIVE));
        samples.push(y.clone());
    }
    Ok(Shot { samples, drift })
}

/// Newtonian two-body boundary-value problem with `V = (e1e2/2)/r`, solved by
/// shooting on the initial velocities. Independent of the action code; meant
/// as an oracle for the nonrelativistic regime.
pub fn coulomb_reference(
    endpoints: &Endpoints,
    grids: (&TimeGrid, &TimeGrid),
    params: &SystemParams,
) -> Result<Solution> {
    check_grids(grids, params)?;
    endpoints.check(params.dim)?;
    if (params.t1 - params.t2).abs() > 1e-12 * params.t1.max(1.0) {
        return Err(Error::InvalidArgument(
            "the Newtonian reference needs a common time, T1 = T2".into(),
        ));
    }
    let d = params.dim;
    let horizon = params.t1;
    let sys = TwoBody {
        dim: d,
        m1: params.m1,
        m2: params.m2,
        half_c: 0.5 * params.coupling,
    };
    let mut times: Vec<f64> = grids.0.nodes().into_iter().chain(grids.1.nodes()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * horizon);
    let last = times.len() - 1;
    times[last] = horizon;

    let mut y0 = Vec::with_capacity(4 * d);
    y0.extend_from_slice(&endpoints.q1_start);
    y0.extend_from_slice(&endpoints.q2_start);
    for i in 0..d {
        y0.push((endpoints.q1_end[i] - endpoints.q1_start[i]) / horizon);
    }
    for i in 0..d {
        y0.push((endpoints.q2_end[i] - endpoints.q2_start[i]) / horizon);
    }
    let target: Vec<f64> = endpoints
        .q1_end
        .iter()
        .chain(&endpoints.q2_end)
        .copied()
        .collect();
    let miss = |y0: &[f64]| -> Result<(Vec<f64>, Shot)> {
        let shot = shoot(&sys, y0, &times)?;
        let end = shot.samples.last().expect("at least two times");
        let m = (0..2 * d).map(|i| end[i] - target[i]).collect();
        Ok((m, shot))
    };

    let scale = target.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut history = Vec::new();
    for _ in 0..50 {
        let (m, shot) = miss(&y0)?;
        let norm = sup(&m);
        history.push(norm);
        if norm <= 1e-11 * scale {
            return reference_solution(grids, params, &times, shot);
        }
        let cols: Vec<Vec<f64>> = (0..2 * d)
            .into_par_iter()
            .map(|j| {
                let h = 1e-7 * (1.0 + y0[2 * d + j].abs());
                let mut yp = y0.clone();
                yp[2 * d + j] += h;
                let (mp, _) = miss(&yp)?;
                yp[2 * d + j] -= 2.0 * h;
                let (mm, _) = miss(&yp)?;
                Ok(mp
                    .iter()
                    .zip(&mm)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let jac = DMatrix::from_fn(2 * d, 2 * d, |r, c| cols[c][r]);
        let dv = jac
            .lu()
            .solve(&DVector::from_column_slice(&m))
            .ok_or_else(|| Error::Singular("shooting Jacobian".into()))?;
        for j in 0..2 * d {
            y0[2 * d + j] -= dv[j];
        }
    }
    Err(Error::Divergence {
        what: "Coulomb reference shooting".into(),
        iterations: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

fn reference_solution(
    grids: (&TimeGrid, &TimeGrid),
    params: &SystemParams,
    times: &[f64],
    shot: Shot,
) -> Result<Solution> {
    let d = params.dim;
    let pick = |grid: &TimeGrid, offset: usize| -> Result<Trajectory> {
        let mut values = Vec::with_capacity(grid.len() * d);
        for t in grid.nodes() {
            let idx = times
                .iter()
                .position(|s| (s - t).abs() <= 1e-14 * grid.horizon())
                .expect("every grid node is a sample time");
            values.extend_from_slice(&shot.samples[idx][offset..offset + d]);
        }
        Trajectory::new(grid.clone(), d, values)
    };
    let t1 = pick(grids.0, 0)?;
    let t2 = pick(grids.1, d)?;
    let residual = newtonian_residual(&t1, &t2, params)?;
    Ok(Solution {
        trajectory1: t1,
        trajectory2: t2,
        trace: vec![ContinuationStep {
            coupling: params.coupling,
            iterations: 0,
            residual: residual.sup_norm,
        }],
        residual,
        kind: SolutionKind::CoulombReference,
        energy_drift: Some(shot.drift),
    })
}

/// `m q̈ + ∇V` by second differences on the sampled reference paths. Only
/// defined when both grids coincide; otherwise interior residuals are zero.
fn newtonian_residual(
    t1: &Trajectory,
    t2: &Trajectory,
    params: &SystemParams,
) -> Result<ResidualReport> {
    let d = params.dim;
    let n1 = t1.len();
    let mut r1 = vec![0.0; n1 * d];
    let mut r2 = vec![0.0; t2.len() * d];
    if t1.grid() == t2.grid() {
        let dt = t1.grid().dt();
        for j in 1..n1 - 1 {
            let r: Vec<f64> = (0..d).map(|i| t1.point(j)[i] - t2.point(j)[i]).collect();
            let dist = norm_sq(&r).sqrt();
            let scale = 0.5 * params.coupling / (dist * dist * dist);
            for i in 0..d {
                let a1 =
                    (t1.point(j + 1)[i] - 2.0 * t1.point(j)[i] + t1.point(j - 1)[i]) / (dt * dt);
                let a2 =
                    (t2.point(j + 1)[i] - 2.0 * t2.point(j)[i] + t2.point(j - 1)[i]) / (dt * dt);
                r1[j * d + i] = params.m1 * a1 - scale * r[i];
                r2[j * d + i] = params.m2 * a2 + scale * r[i];
            }
        }
    }
    Ok(ResidualReport::from_fields(
        &r1,
        &r2,
        t1.grid(),
        t2.grid(),
        d,
        params,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::make_grid;

    fn params(coupling: f64, t: f64) -> SystemParams {
        SystemParams {
            m1: 1.0,
            m2: 1.0,
            coupling,
            t1: t,
            t2: t,
            sigma: 0.05,
            dim: 1,
        }
    }

    fn ends(a: f64, b: f64, c: f64, d: f64) -> Endpoints {
        Endpoints {
            q1_start: vec![a],
            q1_end: vec![b],
            q2_start: vec![c],
            q2_end: vec![d],
        }
    }

    #[test]
    fn free_examples() {
        let p = params(0.0, 1.0);
        let g = make_grid(1.0, 10).unwrap();
        let s = solve_free(&ends(0.0, 0.0, 1.0, 1.0), (&g, &g), &p).unwrap();
        assert!(s.trajectory1.values().iter().all(|x| *x == 0.0));
        let s = solve_free(&ends(0.0, 0.5, 1.0, 1.0), (&g, &g), &p).unwrap();
        for v in s.trajectory1.velocity().unwrap() {
            assert!((v - 0.5).abs() < 1e-14);
        }
        assert!(s.residual.sup_norm < 1e-13);
        assert!(matches!(
            solve_free(&ends(0.0, 1.5, 1.0, 1.0), (&g, &g), &p),
            Err(Error::NoTimelikePath {
                particle: Particle::One,
                ..
            })
        ));
    }

    #[test]
    fn config_is_checked() {
        let bad = SolveConfig {
            damping: 0.0,
            ..SolveConfig::default()
        };
        assert!(bad.check().is_err());
        let bad = SolveConfig {
            continuation_steps: 0,
            ..SolveConfig::default()
        };
        assert!(bad.check().is_err());
        let bad = SolveConfig {
            tolerance: -1.0,
            ..SolveConfig::default()
        };
        assert!(bad.check().is_err());
    }

    #[test]
    fn zero_coupling_reproduces_free() {
        let p = params(0.0, 2.0);
        let g = make_grid(2.0, 20).unwrap();
        let e = ends(0.0, 0.3, 1.0, 0.8);
        let s = solve_el(&e, (&g, &g), &p, &SolveConfig::default()).unwrap();
        let f = solve_free(&e, (&g, &g), &p).unwrap();
        for (a, b) in s.trajectory1.values().iter().zip(f.trajectory1.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn repulsive_pair_curves_away_symmetrically() {
        let p = params(0.05, 4.0);
        let g = make_grid(4.0, 32).unwrap();
        let e = ends(-1.0, -1.0, 1.0, 1.0);
        let s = solve_el(&e, (&g, &g), &p, &SolveConfig::default()).unwrap();
        assert!(s.residual.sup_norm <= 1e-8);
        // outward acceleration with pinned ends: each path first moves
        // towards the other charge
        for j in [8, 16, 24] {
            assert!(s.trajectory1.point(j)[0] > -1.0, "node {j}");
        }
        assert!(s.trajectory1.point(16)[0] > s.trajectory1.point(8)[0]);
        for j in 0..=32 {
            let sum = s.trajectory1.point(j)[0] + s.trajectory2.point(j)[0];
            assert!(sum.abs() < 1e-12, "node {j}: {sum}");
        }
        let couplings: Vec<f64> = s.trace.iter().map(|t| t.coupling).collect();
        assert!(couplings.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*couplings.last().unwrap(), 0.05);
    }

    #[test]
    fn coulomb_reference_free_is_straight() {
        let p = params(0.0, 2.0);
        let g = make_grid(2.0, 16).unwrap();
        let s = coulomb_reference(&ends(0.0, 0.4, 1.0, 1.2), (&g, &g), &p).unwrap();
        for (j, t) in g.nodes().iter().enumerate() {
            assert!((s.trajectory1.point(j)[0] - 0.2 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn coulomb_reference_conserves_energy() {
        let p = params(0.01, 4.0);
        let g = make_grid(4.0, 64).unwrap();
        let s = coulomb_reference(&ends(-1.0, -1.0, 1.0, 1.0), (&g, &g), &p).unwrap();
        assert!(s.energy_drift.unwrap() < 1e-6);
        assert!(s.trajectory1.point(32)[0] > -1.0);
        for j in 0..=64 {
            assert!((s.trajectory1.point(j)[0] + s.trajectory2.point(j)[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn kepler_circle_stays_bounded() {
        // reduced mass 1/2, force 1/2 at r = 1: circular with ω = 1
        let p = SystemParams {
            coupling: -1.0,
            t1: 1.0,
            t2: 1.0,
            dim: 2,
            ..params(0.0, 1.0)
        };
        let g = make_grid(1.0, 40).unwrap();
        let e = Endpoints {
            q1_start: vec![0.5, 0.0],
            q1_end: vec![0.5 * 1f64.cos(), 0.5 * 1f64.sin()],
            q2_start: vec![-0.5, 0.0],
            q2_end: vec![-0.5 * 1f64.cos(), -0.5 * 1f64.sin()],
        };
        let s = coulomb_reference(&e, (&g, &g), &p).unwrap();
        for (j, t) in g.nodes().iter().enumerate() {
            let x = s.trajectory1.point(j);
            assert!((x[0] - 0.5 * t.cos()).abs() < 1e-9);
            assert!((x[1] - 0.5 * t.sin()).abs() < 1e-9);
        }
        assert!(s.energy_drift.unwrap() < 1e-9);
    }

    #[test]
    fn reference_requires_common_time() {
        let p = SystemParams {
            t2: 3.0,
            ..params(0.01, 2.0)
        };
        let g1 = make_grid(2.0, 10).unwrap();
        let g2 = make_grid(3.0, 10).unwrap();
        assert!(matches!(
            coulomb_reference(&ends(0.0, 0.0, 1.0, 1.0), (&g1, &g2), &p),
            Err(Error::InvalidArgument(_))
        ));
    }
}
