//! The regularized two-charge Fokker action, its momentum fields and the
//! multi-time Euler-Lagrange residuals.
//!
//! The discrete action is a function of nodal positions and nodal velocities,
//!
//! ```text
//! I = -Σ_a m_a Σ_j w_aj sqrt(1 - |v_aj|²)
//!     - (e1e2/2) Σ_j Σ_k w_1j w_2k ρ_σ(s_jk) (1 - v_1j·v_2k),
//! s_jk = (t_1j - t_2k)² - |q_1j - q_2k|²,
//! ```
//!
//! with trapezoid weights `w`. Positive `e1e2` (like charges) repels. The
//! velocities are normally `velocity(q)`, but keeping them as separate
//! arguments lets the canonical module evaluate `I[q, F]` for an arbitrary
//! velocity field `F`, and lets the numeric gradient differentiate with
//! respect to `q` and `q̇` independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Particle, Result};
use crate::numerics::{dot, norm_sq, pairwise_sum, time_derivative};
use crate::trajectory::{validated, SystemParams, TimeGrid, Trajectory};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian stand-in for `δ(u)` with variance `sigma`.
pub fn regularized_delta(u: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidRegularization(sigma));
    }
    Ok(rho(u, sigma))
}

#[inline]
pub(crate) fn rho(u: f64, sigma: f64) -> f64 {
    INV_SQRT_2PI / sigma.sqrt() * (-u * u / (2.0 * sigma)).exp()
}

#[inline]
pub(crate) fn interval(t_a: f64, q_a: &[f64], t_b: f64, q_b: &[f64]) -> f64 {
    let dt = t_a - t_b;
    let mut r2 = 0.0;
    for (x, y) in q_a.iter().zip(q_b) {
        let d = x - y;
        r2 += d * d;
    }
    dt * dt - r2
}

/// The three terms of the action and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    pub free1: f64,
    pub free2: f64,
    pub interaction: f64,
    pub total: f64,
}

/// Per-node Euler-Lagrange residuals. Endpoint nodes carry zero residual and
/// are excluded from both norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub particle1: Vec<Vec<f64>>,
    pub particle2: Vec<Vec<f64>>,
    pub sup_norm: f64,
    /// `sqrt(Σ_a Σ_j dt_a |r_aj|²)` over interior nodes.
    pub l2_norm: f64,
    pub metadata: ResidualMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMetadata {
    pub n1: usize,
    pub n2: usize,
    pub sigma: f64,
    pub coupling: f64,
}

impl ResidualReport {
    pub(crate) fn from_fields(
        r1: &[f64],
        r2: &[f64],
        grid1: &TimeGrid,
        grid2: &TimeGrid,
        dim: usize,
        params: &SystemParams,
    ) -> ResidualReport {
        let (s1, l1) = interior_norms(r1, dim, grid1.dt());
        let (s2, l2) = interior_norms(r2, dim, grid2.dt());
        ResidualReport {
            particle1: nested(r1, dim),
            particle2: nested(r2, dim),
            sup_norm: s1.max(s2),
            l2_norm: (l1 + l2).sqrt(),
            metadata: ResidualMetadata {
                n1: grid1.n_steps(),
                n2: grid2.n_steps(),
                sigma: params.sigma,
                coupling: params.coupling,
            },
        }
    }

    pub fn field(&self, particle: Particle) -> &[Vec<f64>] {
        match particle {
            Particle::One => &self.particle1,
            Particle::Two => &self.particle2,
        }
    }
}

/// Sup norm and squared dt-weighted L2 norm over interior nodes.
pub(crate) fn interior_norms(field: &[f64], dim: usize, dt: f64) -> (f64, f64) {
    let nodes = field.len() / dim;
    let mut sup = 0.0f64;
    let mut sq = Vec::with_capacity(nodes);
    for j in 1..nodes.saturating_sub(1) {
        let r = &field[j * dim..(j + 1) * dim];
        for x in r {
            sup = sup.max(x.abs());
        }
        sq.push(dt * norm_sq(r));
    }
    (sup, pairwise_sum(&sq))
}

pub(crate) fn nested(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(<[f64]>::to_vec).collect()
}

/// One particle's positions and velocities on its grid.
#[derive(Clone, Copy)]
pub(crate) struct PathState<'a> {
    pub grid: &'a TimeGrid,
    pub dim: usize,
    pub q: &'a [f64],
    pub v: &'a [f64],
}

impl<'a> PathState<'a> {
    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn q_at(&self, j: usize) -> &'a [f64] {
        &self.q[j * self.dim..(j + 1) * self.dim]
    }

    #[inline]
    pub fn v_at(&self, j: usize) -> &'a [f64] {
        &self.v[j * self.dim..(j + 1) * self.dim]
    }
}

/// `ρ_σ(s_jk)` (and optionally `ρ'_σ`) for every node pair, row-major in
/// particle 1's nodes.
pub(crate) struct Kernel {
    pub n1: usize,
    pub n2: usize,
    pub rho: Vec<f64>,
    pub drho: Option<Vec<f64>>,
}

impl Kernel {
    pub fn new(a: &PathState, b: &PathState, sigma: f64, derivative: bool) -> Kernel {
        Kernel::from_positions(a.grid, a.q, b.grid, b.q, a.dim, sigma, derivative)
    }

    pub fn from_positions(
        grid1: &TimeGrid,
        q1: &[f64],
        grid2: &TimeGrid,
        q2: &[f64],
        dim: usize,
        sigma: f64,
        derivative: bool,
    ) -> Kernel {
        let (n1, n2) = (grid1.len(), grid2.len());
        let t1 = grid1.nodes();
        let t2 = grid2.nodes();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n1)
            .into_par_iter()
            .map(|j| {
                let qj = &q1[j * dim..(j + 1) * dim];
                let mut r = Vec::with_capacity(n2);
                let mut d = Vec::with_capacity(if derivative { n2 } else { 0 });
                for k in 0..n2 {
                    let s = interval(t1[j], qj, t2[k], &q2[k * dim..(k + 1) * dim]);
                    let value = rho(s, sigma);
                    r.push(value);
                    if derivative {
                        // dρ/du
                        d.push(-s / sigma * value);
                    }
                }
                (r, d)
            })
            .collect();
        let mut rho_all = Vec::with_capacity(n1 * n2);
        let mut drho_all = Vec::with_capacity(if derivative { n1 * n2 } else { 0 });
        for (r, d) in rows {
            rho_all.extend(r);
            drho_all.extend(d);
        }
        Kernel {
            n1,
            n2,
            rho: rho_all,
            drho: derivative.then_some(drho_all),
        }
    }

    /// Kernel entry between node `i` of `particle` and node `k` of the other.
    #[inline]
    pub fn rho_for(&self, particle: Particle, i: usize, k: usize) -> f64 {
        match particle {
            Particle::One => self.rho[i * self.n2 + k],
            Particle::Two => self.rho[k * self.n2 + i],
        }
    }

    #[inline]
    fn drho_for(&self, particle: Particle, i: usize, k: usize) -> f64 {
        let d = self.drho.as_ref().expect("kernel built without derivative");
        match particle {
            Particle::One => d[i * self.n2 + k],
            Particle::Two => d[k * self.n2 + i],
        }
    }

    pub fn len_for(&self, particle: Particle) -> usize {
        match particle {
            Particle::One => self.n1,
            Particle::Two => self.n2,
        }
    }
}

pub(crate) fn check_subluminal(state: &PathState, particle: Particle) -> Result<()> {
    for j in 0..state.nodes() {
        let speed2 = norm_sq(state.v_at(j));
        if !(speed2 < 1.0) {
            return Err(Error::Superluminal {
                particle,
                node: j,
                speed: speed2.sqrt(),
            });
        }
    }
    Ok(())
}

pub(crate) fn free_action(state: &PathState, mass: f64, particle: Particle) -> Result<f64> {
    check_subluminal(state, particle)?;
    let w = state.grid.weights();
    let terms: Vec<f64> = (0..state.nodes())
        .map(|j| w[j] * (1.0 - norm_sq(state.v_at(j))).sqrt())
        .collect();
    Ok(-mass * pairwise_sum(&terms))
}

/// Interaction term. Row-wise and column-wise totals of the summand matrix
/// are averaged so the value is bit-identical under particle exchange.
pub(crate) fn interaction_action(a: &PathState, b: &PathState, params: &SystemParams) -> f64 {
    let kernel = Kernel::new(a, b, params.sigma, false);
    interaction_with_kernel(a, b, &kernel, params.coupling)
}

pub(crate) fn interaction_with_kernel(
    a: &PathState,
    b: &PathState,
    kernel: &Kernel,
    coupling: f64,
) -> f64 {
    let (n1, n2) = (kernel.n1, kernel.n2);
    let w1 = a.grid.weights();
    let w2 = b.grid.weights();
    let summand: Vec<f64> = (0..n1)
        .into_par_iter()
        .flat_map_iter(|j| {
            let w2 = &w2;
            let w1j = w1[j];
            (0..n2).map(move |k| {
                (w1j * w2[k]) * kernel.rho[j * n2 + k] * (1.0 - dot(a.v_at(j), b.v_at(k)))
            })
        })
        .collect();
    let rows: Vec<f64> = (0..n1)
        .into_par_iter()
        .map(|j| pairwise_sum(&summand[j * n2..(j + 1) * n2]))
        .collect();
    let cols: Vec<f64> = (0..n2)
        .into_par_iter()
        .map(|k| {
            let col: Vec<f64> = (0..n1).map(|j| summand[j * n2 + k]).collect();
            pairwise_sum(&col)
        })
        .collect();
    let by_rows = pairwise_sum(&rows);
    let by_cols = pairwise_sum(&cols);
    -0.5 * coupling * (0.5 * (by_rows + by_cols))
}

pub(crate) fn breakdown_from_states(
    a: &PathState,
    b: &PathState,
    params: &SystemParams,
) -> Result<ActionBreakdown> {
    check_subluminal(a, Particle::One)?;
    check_subluminal(b, Particle::Two)?;
    let kernel = Kernel::new(a, b, params.sigma, false);
    breakdown_with_kernel(a, b, &kernel, params)
}

pub(crate) fn breakdown_with_kernel(
    a: &PathState,
    b: &PathState,
    kernel: &Kernel,
    params: &SystemParams,
) -> Result<ActionBreakdown> {
    let free1 = free_action(a, params.m1, Particle::One)?;
    let free2 = free_action(b, params.m2, Particle::Two)?;
    let interaction = interaction_with_kernel(a, b, kernel, params.coupling);
    Ok(ActionBreakdown {
        free1,
        free2,
        interaction,
        total: free1 + free2 + interaction,
    })
}

/// Evaluates the action with velocities reconstructed from the paths.
pub fn fokker_action(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<ActionBreakdown> {
    validated(params, traj1, traj2)?;
    let v1 = traj1.velocity()?;
    let v2 = traj2.velocity()?;
    let (a, b) = states(traj1, &v1, traj2, &v2);
    breakdown_from_states(&a, &b, params)
}

pub(crate) fn states<'a>(
    traj1: &'a Trajectory,
    v1: &'a [f64],
    traj2: &'a Trajectory,
    v2: &'a [f64],
) -> (PathState<'a>, PathState<'a>) {
    (
        PathState {
            grid: traj1.grid(),
            dim: traj1.dim(),
            q: traj1.values(),
            v: v1,
        },
        PathState {
            grid: traj2.grid(),
            dim: traj2.dim(),
            q: traj2.values(),
            v: v2,
        },
    )
}

/// `m v / sqrt(1 - v²)` for one node.
#[inline]
pub(crate) fn free_momentum(mass: f64, v: &[f64], out: &mut [f64]) {
    let gamma = 1.0 / (1.0 - norm_sq(v)).sqrt();
    for (o, x) in out.iter_mut().zip(v) {
        *o = mass * gamma * x;
    }
}

/// Momentum density `δI/δq̇` of `particle` at every node.
pub(crate) fn momentum_density(
    particle: Particle,
    me: &PathState,
    other: &PathState,
    kernel: &Kernel,
    params: &SystemParams,
) -> Vec<f64> {
    let dim = me.dim;
    let w_other = other.grid.weights();
    let mass = params.mass(particle);
    let half_c = 0.5 * params.coupling;
    let rows: Vec<Vec<f64>> = (0..kernel.len_for(particle))
        .into_par_iter()
        .map(|j| {
            let mut p = vec![0.0; dim];
            free_momentum(mass, me.v_at(j), &mut p);
            let mut acc = vec![0.0; dim];
            for (k, wk) in w_other.iter().enumerate() {
                let weight = wk * kernel.rho_for(particle, j, k);
                for (a, vk) in acc.iter_mut().zip(other.v_at(k)) {
                    *a += weight * vk;
                }
            }
            for (pi, ai) in p.iter_mut().zip(&acc) {
                *pi += half_c * ai;
            }
            p
        })
        .collect();
    rows.concat()
}

/// Explicit position derivative `δI/δq` of `particle` (velocities held fixed).
pub(crate) fn force_density(
    particle: Particle,
    me: &PathState,
    other: &PathState,
    kernel: &Kernel,
    params: &SystemParams,
) -> Vec<f64> {
    let dim = me.dim;
    let w_other = other.grid.weights();
    let c = params.coupling;
    let rows: Vec<Vec<f64>> = (0..kernel.len_for(particle))
        .into_par_iter()
        .map(|j| {
            let qj = me.q_at(j);
            let vj = me.v_at(j);
            let mut acc = vec![0.0; dim];
            for (k, wk) in w_other.iter().enumerate() {
                let factor = wk * kernel.drho_for(particle, j, k) * (1.0 - dot(vj, other.v_at(k)));
                for ((a, x), y) in acc.iter_mut().zip(qj).zip(other.q_at(k)) {
                    *a += factor * (x - y);
                }
            }
            acc.iter().map(|a| c * a).collect::<Vec<f64>>()
        })
        .collect();
    rows.concat()
}

pub(crate) fn momenta_from_states(
    a: &PathState,
    b: &PathState,
    params: &SystemParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_subluminal(a, Particle::One)?;
    check_subluminal(b, Particle::Two)?;
    let kernel = Kernel::new(a, b, params.sigma, false);
    Ok((
        momentum_density(Particle::One, a, b, &kernel, params),
        momentum_density(Particle::Two, b, a, &kernel, params),
    ))
}

/// Canonical momenta `p_a = δI/δq̇_a` as closed-form fields.
pub fn momentum_fields(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    validated(params, traj1, traj2)?;
    let v1 = traj1.velocity()?;
    let v2 = traj2.velocity()?;
    let (a, b) = states(traj1, &v1, traj2, &v2);
    momenta_from_states(&a, &b, params)
}

/// Flat residual fields `δI/δq - d/dt δI/δq̇`, zero at the endpoints.
pub(crate) fn el_residual_fields(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let v1 = traj1.velocity()?;
    let v2 = traj2.velocity()?;
    let (a, b) = states(traj1, &v1, traj2, &v2);
    check_subluminal(&a, Particle::One)?;
    check_subluminal(&b, Particle::Two)?;
    let kernel = Kernel::new(&a, &b, params.sigma, true);
    let mut out = Vec::with_capacity(2);
    for (particle, me, other) in [(Particle::One, &a, &b), (Particle::Two, &b, &a)] {
        let p = momentum_density(particle, me, other, &kernel, params);
        let f = force_density(particle, me, other, &kernel, params);
        let dp = time_derivative(&p, me.dim, me.grid.dt())?;
        let dim = me.dim;
        let nodes = me.nodes();
        let mut r: Vec<f64> = f.iter().zip(&dp).map(|(x, y)| x - y).collect();
        r[..dim].fill(0.0);
        r[(nodes - 1) * dim..].fill(0.0);
        out.push(r);
    }
    let r2 = out.pop().expect("two residual fields");
    let r1 = out.pop().expect("two residual fields");
    Ok((r1, r2))
}

/// Multi-time Euler-Lagrange residuals of both particles.
pub fn el_residual(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<ResidualReport> {
    validated(params, traj1, traj2)?;
    let (r1, r2) = el_residual_fields(traj1, traj2, params)?;
    Ok(ResidualReport::from_fields(
        &r1,
        &r2,
        traj1.grid(),
        traj2.grid(),
        traj1.dim(),
        params,
    ))
}

/// Which scalar the numeric gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientTarget {
    Action,
    Free1,
    Free2,
    Interaction,
}

/// Which nodal variable is perturbed. Positions are perturbed with the
/// velocity field held fixed and vice versa, so the Euler-Lagrange
/// combination is `grad_position - d/dt grad_velocity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientVariable {
    Position,
    Velocity,
}

fn evaluate_target(
    target: GradientTarget,
    a: &PathState,
    b: &PathState,
    params: &SystemParams,
) -> Result<f64> {
    Ok(match target {
        GradientTarget::Action => breakdown_from_states(a, b, params)?.total,
        GradientTarget::Free1 => free_action(a, params.m1, Particle::One)?,
        GradientTarget::Free2 => free_action(b, params.m2, Particle::Two)?,
        GradientTarget::Interaction => interaction_action(a, b, params),
    })
}

/// Central-difference functional gradient of a scalar action term.
///
/// Each nodal coordinate `x` is displaced by `±h (1 + |x|)`; the nodal
/// partial derivative is divided by the particle's `dt` to give a density.
pub fn numeric_functional_gradient(
    target: GradientTarget,
    variable: GradientVariable,
    which: Particle,
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidStep(h));
    }
    let v1 = traj1.velocity()?;
    let v2 = traj2.velocity()?;
    let me = match which {
        Particle::One => traj1,
        Particle::Two => traj2,
    };
    let base: Vec<f64> = match (variable, which) {
        (GradientVariable::Position, _) => me.values().to_vec(),
        (GradientVariable::Velocity, Particle::One) => v1.clone(),
        (GradientVariable::Velocity, Particle::Two) => v2.clone(),
    };
    let dt = me.grid().dt();
    let eval = |field: &[f64]| -> Result<f64> {
        let (q1, vv1, q2, vv2) = match (variable, which) {
            (GradientVariable::Position, Particle::One) => {
                (field, &v1[..], traj2.values(), &v2[..])
            }
            (GradientVariable::Position, Particle::Two) => {
                (traj1.values(), &v1[..], field, &v2[..])
            }
            (GradientVariable::Velocity, Particle::One) => {
                (traj1.values(), field, traj2.values(), &v2[..])
            }
            (GradientVariable::Velocity, Particle::Two) => {
                (traj1.values(), &v1[..], traj2.values(), field)
            }
        };
        let a = PathState {
            grid: traj1.grid(),
            dim: traj1.dim(),
            q: q1,
            v: vv1,
        };
        let b = PathState {
            grid: traj2.grid(),
            dim: traj2.dim(),
            q: q2,
            v: vv2,
        };
        evaluate_target(target, &a, &b, params)
    };
    (0..base.len())
        .into_par_iter()
        .map(|idx| {
            let step = h * (1.0 + base[idx].abs());
            let mut field = base.clone();
            field[idx] = base[idx] + step;
            let plus = eval(&field)?;
            field[idx] = base[idx] - step;
            let minus = eval(&field)?;
            Ok((plus - minus) / (2.0 * step) / dt)
        })
        .collect()
}

/// Richardson-extrapolated gradient `(4 g(h/2) - g(h)) / 3`, fourth order in `h`.
pub fn richardson_functional_gradient(
    target: GradientTarget,
    variable: GradientVariable,
    which: Particle,
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
    h: f64,
) -> Result<Vec<f64>> {
    let coarse = numeric_functional_gradient(target, variable, which, traj1, traj2, params, h)?;
    let fine = numeric_functional_gradient(target, variable, which, traj1, traj2, params, 0.5 * h)?;
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect())
}
