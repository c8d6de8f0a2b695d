//! Generalized Legendre transform of the two-charge action.
//!
//! Given momentum fields `p_a` on each particle's grid, the velocity fields
//! `F_a` are recovered by solving the momentum relations
//!
//! ```text
//! p_a = m_a F_a / sqrt(1 - F_a²) + (e1e2/2) Σ_k w_bk ρ_σ(s) F_bk
//! ```
//!
//! either to first order in the coupling or by damped fixed-point iteration.
//! The Hamiltonian functional is `H = Σ_a ∫ p_a·F_a dt_a - I[q, F]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{breakdown_with_kernel, check_subluminal, momentum_density, Kernel, PathState};
use crate::error::{Error, Particle, Result};
use crate::numerics::{dot, norm_sq, pairwise_sum, time_derivative};
use crate::trajectory::{validated, PhaseField, SystemParams, TimeGrid};

/// Fixed-point tolerance used when the velocities are eliminated implicitly.
pub const DEFAULT_VELOCITY_TOL: f64 = 1e-13;
pub const DEFAULT_VELOCITY_MAX_ITER: usize = 10_000;
const DAMPING: f64 = 0.5;
const HAMILTONIAN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityMethod {
    PerturbativeFirstOrder,
    FixedPointNumeric,
}

/// Velocity fields `F_a` recovered from momenta, flat and node-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySolution {
    pub particle1: Vec<f64>,
    pub particle2: Vec<f64>,
    pub method: VelocityMethod,
    pub iterations: usize,
    pub tolerance: f64,
    /// Sup norm of the undamped update at each iteration.
    pub history: Vec<f64>,
}

impl VelocitySolution {
    pub fn field(&self, particle: Particle) -> &[f64] {
        match particle {
            Particle::One => &self.particle1,
            Particle::Two => &self.particle2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketResidual {
    pub particle1: Vec<Vec<f64>>,
    pub particle2: Vec<Vec<f64>>,
    pub sup_norm: f64,
    /// `sqrt(Σ_a Σ_j w_aj |r_aj|²)` with trapezoid weights.
    pub l2_norm: f64,
}

/// Residuals of `q̇ - δH/δp` and `ṗ + δH/δq`. The second is zero at the
/// fixed endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub q_bracket: BracketResidual,
    pub p_bracket: BracketResidual,
}

impl StationarityReport {
    pub fn max_sup_norm(&self) -> f64 {
        self.q_bracket.sup_norm.max(self.p_bracket.sup_norm)
    }
}

#[derive(Clone, Copy)]
struct Phase<'a> {
    grid: &'a TimeGrid,
    dim: usize,
    q: &'a [f64],
    p: &'a [f64],
}

impl<'a> Phase<'a> {
    fn of(field: &'a PhaseField) -> Phase<'a> {
        Phase {
            grid: field.grid(),
            dim: field.dim(),
            q: field.q().values(),
            p: field.p(),
        }
    }

    fn p_at(&self, j: usize) -> &'a [f64] {
        &self.p[j * self.dim..(j + 1) * self.dim]
    }

    fn with_velocity(&self, v: &'a [f64]) -> PathState<'a> {
        PathState {
            grid: self.grid,
            dim: self.dim,
            q: self.q,
            v,
        }
    }
}

fn kernel_of(a: &Phase, b: &Phase, sigma: f64) -> Kernel {
    Kernel::from_positions(a.grid, a.q, b.grid, b.q, a.dim, sigma, false)
}

/// `sqrt(p² + m²)` at every node.
fn energies(phase: &Phase, mass: f64) -> Vec<f64> {
    phase
        .p
        .chunks(phase.dim)
        .map(|p| (norm_sq(p) + mass * mass).sqrt())
        .collect()
}

/// Inverse of `v -> m v / sqrt(1 - v²)`.
#[inline]
fn free_inverse(pi: &[f64], mass: f64, out: &mut [f64]) {
    let e = (norm_sq(pi) + mass * mass).sqrt();
    for (o, x) in out.iter_mut().zip(pi) {
        *o = x / e;
    }
}

fn check_phase(phase1: &PhaseField, phase2: &PhaseField, params: &SystemParams) -> Result<()> {
    validated(params, phase1.q(), phase2.q())?;
    for (particle, phase) in [(Particle::One, phase1), (Particle::Two, phase2)] {
        if let Some(j) = phase.p().iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite momentum on {particle} at entry {j}"
            )));
        }
    }
    Ok(())
}

fn first_order(
    a: &Phase,
    b: &Phase,
    kernel: &Kernel,
    params: &SystemParams,
) -> (Vec<f64>, Vec<f64>) {
    let e1 = energies(a, params.m1);
    let e2 = energies(b, params.m2);
    let half_c = 0.5 * params.coupling;
    let one = |particle: Particle, me: &Phase, other: &Phase, e_me: &[f64], e_other: &[f64]| {
        let dim = me.dim;
        let w = other.grid.weights();
        let rows: Vec<Vec<f64>> = (0..me.grid.len())
            .into_par_iter()
            .map(|j| {
                let pj = me.p_at(j);
                let ej = e_me[j];
                let mut f: Vec<f64> = pj.iter().map(|x| x / ej).collect();
                let mut acc = vec![0.0; dim];
                for (k, wk) in w.iter().enumerate() {
                    let pk = other.p_at(k);
                    let g = wk * kernel.rho_for(particle, j, k) / (ej * e_other[k]);
                    let pp = dot(pj, pk) / (ej * ej);
                    for i in 0..dim {
                        acc[i] += g * (pj[i] * pp - pk[i]);
                    }
                }
                for (fi, ai) in f.iter_mut().zip(&acc) {
                    *fi += half_c * ai;
                }
                f
            })
            .collect();
        rows.concat()
    };
    (
        one(Particle::One, a, b, &e1, &e2),
        one(Particle::Two, b, a, &e2, &e1),
    )
}

/// One undamped sweep `G_a = g_a⁻¹(p_a - (e1e2/2) Σ w ρ F_b)`.
fn sweep(
    particle: Particle,
    me: &Phase,
    other_f: &[f64],
    other_grid: &TimeGrid,
    kernel: &Kernel,
    params: &SystemParams,
) -> Vec<f64> {
    let dim = me.dim;
    let mass = params.mass(particle);
    let half_c = 0.5 * params.coupling;
    let w = other_grid.weights();
    let rows: Vec<Vec<f64>> = (0..me.grid.len())
        .into_par_iter()
        .map(|j| {
            let mut pi = me.p_at(j).to_vec();
            if half_c != 0.0 {
                let mut acc = vec![0.0; dim];
                for (k, wk) in w.iter().enumerate() {
                    let g = wk * kernel.rho_for(particle, j, k);
                    for (a, f) in acc.iter_mut().zip(&other_f[k * dim..(k + 1) * dim]) {
                        *a += g * f;
                    }
                }
                for (x, a) in pi.iter_mut().zip(&acc) {
                    *x -= half_c * a;
                }
            }
            let mut out = vec![0.0; dim];
            free_inverse(&pi, mass, &mut out);
            out
        })
        .collect();
    rows.concat()
}

/// Lipschitz bound of the momentum map in the sup norm. Above one the
/// momentum relations can have several roots (saturated branches with
/// `|F| -> 1`), so a converged iterate would not be certified.
fn contraction_bound(a: &Phase, b: &Phase, kernel: &Kernel, params: &SystemParams) -> f64 {
    let half_c = 0.5 * params.coupling.abs();
    if half_c == 0.0 {
        return 0.0;
    }
    let w1 = a.grid.weights();
    let w2 = b.grid.weights();
    let mut worst = 0.0f64;
    for j in 0..kernel.n1 {
        let s: f64 = (0..kernel.n2)
            .map(|k| w2[k] * kernel.rho[j * kernel.n2 + k])
            .sum();
        worst = worst.max(s / params.m1);
    }
    for k in 0..kernel.n2 {
        let s: f64 = (0..kernel.n1)
            .map(|j| w1[j] * kernel.rho[j * kernel.n2 + k])
            .sum();
        worst = worst.max(s / params.m2);
    }
    half_c * worst
}

struct FixedPoint {
    f1: Vec<f64>,
    f2: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
}

fn fixed_point(
    a: &Phase,
    b: &Phase,
    kernel: &Kernel,
    params: &SystemParams,
    tol: f64,
    max_iter: usize,
    start: Option<(&[f64], &[f64])>,
) -> Result<FixedPoint> {
    let (mut f1, mut f2) = match start {
        Some((f1, f2)) => (f1.to_vec(), f2.to_vec()),
        None => {
            let zero = params.with_coupling(0.0);
            let g1 = sweep(Particle::One, a, &[], b.grid, kernel, &zero);
            let g2 = sweep(Particle::Two, b, &[], a.grid, kernel, &zero);
            (g1, g2)
        }
    };
    let bound = contraction_bound(a, b, kernel, params);
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let g1 = sweep(Particle::One, a, &f2, b.grid, kernel, params);
        let g2 = sweep(Particle::Two, b, &f1, a.grid, kernel, params);
        let mut update = 0.0f64;
        for (f, g) in f1.iter_mut().zip(&g1).chain(f2.iter_mut().zip(&g2)) {
            let d = g - *f;
            update = update.max(d.abs());
            *f += DAMPING * d;
        }
        if !update.is_finite() {
            update = f64::INFINITY;
        }
        history.push(update);
        if update < tol && bound < 1.0 {
            return Ok(FixedPoint {
                f1,
                f2,
                iterations: it,
                history,
            });
        }
        if !update.is_finite() || (update < tol && bound >= 1.0) {
            break;
        }
    }
    let what = if bound >= 1.0 {
        format!("velocity elimination (contraction bound {bound:.3e} >= 1)")
    } else {
        "velocity elimination".to_string()
    };
    Err(Error::Divergence {
        what,
        iterations: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// First-order (in `e1e2`) solution of the momentum relations for `F_a`.
pub fn perturbative_velocities(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
) -> Result<VelocitySolution> {
    check_phase(phase1, phase2, params)?;
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let kernel = kernel_of(&a, &b, params.sigma);
    let (f1, f2) = first_order(&a, &b, &kernel, params);
    Ok(VelocitySolution {
        particle1: f1,
        particle2: f2,
        method: VelocityMethod::PerturbativeFirstOrder,
        iterations: 0,
        tolerance: 0.0,
        history: Vec::new(),
    })
}

/// Damped fixed-point solution of the momentum relations, started from the
/// zero-coupling inversion `F = p / sqrt(p² + m²)`.
///
/// Stops when the sup norm of the undamped update drops below `tol`.
pub fn numeric_velocities(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
    tol: f64,
    max_iter: usize,
) -> Result<VelocitySolution> {
    check_phase(phase1, phase2, params)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {tol}"
        )));
    }
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let kernel = kernel_of(&a, &b, params.sigma);
    let fp = fixed_point(&a, &b, &kernel, params, tol, max_iter, None)?;
    Ok(VelocitySolution {
        particle1: fp.f1,
        particle2: fp.f2,
        method: VelocityMethod::FixedPointNumeric,
        iterations: fp.iterations,
        tolerance: tol,
        history: fp.history,
    })
}

/// Momenta `δI/δq̇` evaluated at the velocity fields of `solution`.
pub fn recovered_momenta(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
    solution: &VelocitySolution,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_solution(phase1, phase2, solution)?;
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let sa = a.with_velocity(&solution.particle1);
    let sb = b.with_velocity(&solution.particle2);
    check_subluminal(&sa, Particle::One)?;
    check_subluminal(&sb, Particle::Two)?;
    let kernel = kernel_of(&a, &b, params.sigma);
    Ok((
        momentum_density(Particle::One, &sa, &sb, &kernel, params),
        momentum_density(Particle::Two, &sb, &sa, &kernel, params),
    ))
}

fn check_solution(
    phase1: &PhaseField,
    phase2: &PhaseField,
    solution: &VelocitySolution,
) -> Result<()> {
    for (particle, phase) in [(Particle::One, phase1), (Particle::Two, phase2)] {
        let n = solution.field(particle).len();
        if n != phase.p().len() {
            return Err(Error::Dimension(format!(
                "velocity field of {particle} has {n} entries, phase field has {}",
                phase.p().len()
            )));
        }
    }
    Ok(())
}

fn weighted_dot(phase: &Phase, v: &[f64]) -> f64 {
    let w = phase.grid.weights();
    let terms: Vec<f64> = (0..phase.grid.len())
        .map(|j| w[j] * dot(phase.p_at(j), &v[j * phase.dim..(j + 1) * phase.dim]))
        .collect();
    pairwise_sum(&terms)
}

fn legendre(
    a: &Phase,
    b: &Phase,
    kernel: &Kernel,
    f1: &[f64],
    f2: &[f64],
    params: &SystemParams,
) -> Result<f64> {
    let sa = a.with_velocity(f1);
    let sb = b.with_velocity(f2);
    let action = breakdown_with_kernel(&sa, &sb, kernel, params)?.total;
    Ok(weighted_dot(a, f1) + weighted_dot(b, f2) - action)
}

/// `H = Σ_a ∫ p_a·F_a dt_a - I[q, F]` for the given velocity solution.
pub fn generalized_hamiltonian(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
    solution: &VelocitySolution,
) -> Result<f64> {
    check_phase(phase1, phase2, params)?;
    check_solution(phase1, phase2, solution)?;
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let kernel = kernel_of(&a, &b, params.sigma);
    legendre(
        &a,
        &b,
        &kernel,
        &solution.particle1,
        &solution.particle2,
        params,
    )
}

/// Closed first-order Hamiltonian
/// `Σ_a ∫ sqrt(p_a² + m_a²) + (e1e2/2) ∬ ρ_σ (1 - p1·p2 / (E1 E2))`.
pub fn first_order_hamiltonian(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
) -> Result<f64> {
    check_phase(phase1, phase2, params)?;
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let kernel = kernel_of(&a, &b, params.sigma);
    let e1 = energies(&a, params.m1);
    let e2 = energies(&b, params.m2);
    let w1 = a.grid.weights();
    let w2 = b.grid.weights();
    let free = |e: &[f64], w: &[f64]| {
        let t: Vec<f64> = e.iter().zip(w).map(|(e, w)| e * w).collect();
        pairwise_sum(&t)
    };
    let rows: Vec<f64> = (0..a.grid.len())
        .into_par_iter()
        .map(|j| {
            let terms: Vec<f64> = (0..b.grid.len())
                .map(|k| {
                    let mag = dot(a.p_at(j), b.p_at(k)) / (e1[j] * e2[k]);
                    w1[j] * w2[k] * kernel.rho[j * kernel.n2 + k] * (1.0 - mag)
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(free(&e1, &w1) + free(&e2, &w2) + 0.5 * params.coupling * pairwise_sum(&rows))
}

fn pq_dot(phase1: &PhaseField, phase2: &PhaseField) -> Result<f64> {
    let mut total = 0.0;
    for phase in [phase1, phase2] {
        let v = phase.q().velocity()?;
        total += weighted_dot(&Phase::of(phase), &v);
    }
    Ok(total)
}

/// `Σ_a ∫ p_a·q̇_a dt_a - H` with the velocities eliminated by fixed-point
/// iteration.
pub fn canonical_action(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
) -> Result<f64> {
    let solution = numeric_velocities(
        phase1,
        phase2,
        params,
        DEFAULT_VELOCITY_TOL,
        DEFAULT_VELOCITY_MAX_ITER,
    )?;
    let h = generalized_hamiltonian(phase1, phase2, params, &solution)?;
    Ok(pq_dot(phase1, phase2)? - h)
}

/// Canonical action with the closed first-order Hamiltonian.
pub fn canonical_action_first_order(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
) -> Result<f64> {
    let h = first_order_hamiltonian(phase1, phase2, params)?;
    Ok(pq_dot(phase1, phase2)? - h)
}

/// Exact-elimination Hamiltonian as a function of raw fields, warm-started
/// from a nearby solution.
struct HamiltonianProbe<'a> {
    grids: [&'a TimeGrid; 2],
    dim: usize,
    q: [&'a [f64]; 2],
    p: [&'a [f64]; 2],
    warm: [&'a [f64]; 2],
    params: &'a SystemParams,
}

impl HamiltonianProbe<'_> {
    fn eval(&self, q: [&[f64]; 2], p: [&[f64]; 2], kernel: Option<&Kernel>) -> Result<f64> {
        let a = Phase {
            grid: self.grids[0],
            dim: self.dim,
            q: q[0],
            p: p[0],
        };
        let b = Phase {
            grid: self.grids[1],
            dim: self.dim,
            q: q[1],
            p: p[1],
        };
        let owned;
        let kernel = match kernel {
            Some(k) => k,
            None => {
                owned = kernel_of(&a, &b, self.params.sigma);
                &owned
            }
        };
        let fp = fixed_point(
            &a,
            &b,
            kernel,
            self.params,
            DEFAULT_VELOCITY_TOL,
            DEFAULT_VELOCITY_MAX_ITER,
            Some((self.warm[0], self.warm[1])),
        )?;
        legendre(&a, &b, kernel, &fp.f1, &fp.f2, self.params)
    }

    /// Central-difference density `δH/δx` for every entry of particle
    /// `which`'s position (`momentum == false`) or momentum field.
    fn gradient(&self, which: usize, momentum: bool, base_kernel: &Kernel) -> Result<Vec<f64>> {
        let base = if momentum {
            self.p[which]
        } else {
            self.q[which]
        };
        let dim = self.dim;
        let w = self.grids[which].weights();
        let nodes = self.grids[which].len();
        (0..base.len())
            .into_par_iter()
            .map(|idx| {
                let j = idx / dim;
                if !momentum && (j == 0 || j + 1 == nodes) {
                    return Ok(0.0);
                }
                let step = HAMILTONIAN_STEP * (1.0 + base[idx].abs());
                let mut field = base.to_vec();
                let mut at = |x: f64| -> Result<f64> {
                    field[idx] = x;
                    let (mut q, mut p) = (self.q, self.p);
                    if momentum {
                        p[which] = &field;
                        self.eval(q, p, Some(base_kernel))
                    } else {
                        q[which] = &field;
                        self.eval(q, p, None)
                    }
                };
                let plus = at(base[idx] + step)?;
                let minus = at(base[idx] - step)?;
                Ok((plus - minus) / (2.0 * step) / w[j])
            })
            .collect()
    }
}

fn bracket(
    r1: Vec<f64>,
    r2: Vec<f64>,
    phase1: &PhaseField,
    phase2: &PhaseField,
) -> BracketResidual {
    let dim = phase1.dim();
    let mut sup = 0.0f64;
    let mut sq = Vec::new();
    for (r, phase) in [(&r1, phase1), (&r2, phase2)] {
        let w = phase.grid().weights();
        for (j, chunk) in r.chunks(dim).enumerate() {
            for x in chunk {
                sup = sup.max(x.abs());
            }
            sq.push(w[j] * norm_sq(chunk));
        }
    }
    BracketResidual {
        particle1: r1.chunks(dim).map(<[f64]>::to_vec).collect(),
        particle2: r2.chunks(dim).map(<[f64]>::to_vec).collect(),
        sup_norm: sup,
        l2_norm: pairwise_sum(&sq).sqrt(),
    }
}

/// Per-node residuals of the canonical equations `q̇ = δH/δp` and
/// `ṗ = -δH/δq`, with `H` differentiated numerically through the exact
/// velocity elimination.
pub fn stationarity_residuals(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
) -> Result<StationarityReport> {
    check_phase(phase1, phase2, params)?;
    let base = numeric_velocities(
        phase1,
        phase2,
        params,
        DEFAULT_VELOCITY_TOL,
        DEFAULT_VELOCITY_MAX_ITER,
    )?;
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let kernel = kernel_of(&a, &b, params.sigma);
    let probe = HamiltonianProbe {
        grids: [a.grid, b.grid],
        dim: a.dim,
        q: [a.q, b.q],
        p: [a.p, b.p],
        warm: [&base.particle1, &base.particle2],
        params,
    };
    let mut q_res = Vec::with_capacity(2);
    let mut p_res = Vec::with_capacity(2);
    for (which, phase) in [phase1, phase2].into_iter().enumerate() {
        let qdot = phase.q().velocity()?;
        let pdot = time_derivative(phase.p(), phase.dim(), phase.grid().dt())?;
        let dh_dp = probe.gradient(which, true, &kernel)?;
        let dh_dq = probe.gradient(which, false, &kernel)?;
        q_res.push(
            qdot.iter()
                .zip(&dh_dp)
                .map(|(x, y)| x - y)
                .collect::<Vec<f64>>(),
        );
        let dim = phase.dim();
        let nodes = phase.grid().len();
        let mut r: Vec<f64> = pdot.iter().zip(&dh_dq).map(|(x, y)| x + y).collect();
        r[..dim].fill(0.0);
        r[(nodes - 1) * dim..].fill(0.0);
        p_res.push(r);
    }
    let (q2, q1) = (q_res.pop().unwrap(), q_res.pop().unwrap());
    let (p2, p1) = (p_res.pop().unwrap(), p_res.pop().unwrap());
    Ok(StationarityReport {
        q_bracket: bracket(q1, q2, phase1, phase2),
        p_bracket: bracket(p1, p2, phase1, phase2),
    })
}

/// Explicit position derivative `δI/δq` at the given velocity fields. Used by
/// tests that compare the `p` bracket with the Euler-Lagrange residual.
#[cfg(test)]
fn explicit_force(
    phase1: &PhaseField,
    phase2: &PhaseField,
    params: &SystemParams,
    f: &VelocitySolution,
) -> Vec<f64> {
    let (a, b) = (Phase::of(phase1), Phase::of(phase2));
    let sa = a.with_velocity(&f.particle1);
    let sb = b.with_velocity(&f.particle2);
    let kernel = Kernel::new(&sa, &sb, params.sigma, true);
    crate::action::force_density(Particle::One, &sa, &sb, &kernel, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{fokker_action, momentum_fields};
    use crate::numerics::log_log_slope;
    use crate::trajectory::{make_grid, Trajectory};

    fn params(coupling: f64) -> SystemParams {
        SystemParams {
            m1: 1.0,
            m2: 1.4,
            coupling,
            t1: 2.0,
            t2: 2.0,
            sigma: 0.1,
            dim: 1,
        }
    }

    fn at_rest(p: &SystemParams, n: usize, x1: f64, x2: f64) -> (Trajectory, Trajectory) {
        let g1 = make_grid(p.t1, n).unwrap();
        let g2 = make_grid(p.t2, n).unwrap();
        (
            Trajectory::straight(g1, &[x1], &[x1]).unwrap(),
            Trajectory::straight(g2, &[x2], &[x2]).unwrap(),
        )
    }

    fn phases(
        q1: Trajectory,
        p1: Vec<f64>,
        q2: Trajectory,
        p2: Vec<f64>,
    ) -> (PhaseField, PhaseField) {
        (
            PhaseField::new(q1, p1).unwrap(),
            PhaseField::new(q2, p2).unwrap(),
        )
    }

    /// Close, slowly moving charges with smooth small momenta.
    fn curved(p: &SystemParams, n: usize) -> (PhaseField, PhaseField) {
        let g1 = make_grid(p.t1, n).unwrap();
        let g2 = make_grid(p.t2, n).unwrap();
        let q1 = Trajectory::from_fn(g1.clone(), 1, |t| vec![0.1 * (t).sin()]).unwrap();
        let q2 = Trajectory::from_fn(g2.clone(), 1, |t| vec![0.5 - 0.05 * t]).unwrap();
        let p1 = g1.nodes().iter().map(|t| 0.3 * (1.3 * t).cos()).collect();
        let p2 = g2.nodes().iter().map(|t| -0.2 + 0.1 * t).collect();
        phases(q1, p1, q2, p2)
    }

    #[test]
    fn zero_coupling_inversion() {
        let p = params(0.0);
        let (q1, q2) = at_rest(&p, 10, 0.0, 1.0);
        let (a, b) = phases(q1, vec![0.75; 11], q2, vec![0.0; 11]);
        let pert = perturbative_velocities(&a, &b, &p).unwrap();
        let num = numeric_velocities(&a, &b, &p, 1e-14, 100).unwrap();
        assert_eq!(num.iterations, 1);
        for (x, y) in pert.particle1.iter().zip(&num.particle1) {
            assert!((x - 0.6).abs() < 1e-15);
            assert!((x - y).abs() < 1e-15);
        }
        assert!(pert.particle2.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_momenta_give_zero_velocity() {
        let p = params(0.3);
        let (q1, q2) = at_rest(&p, 20, 0.0, 0.3);
        let (a, b) = phases(q1, vec![0.0; 21], q2, vec![0.0; 21]);
        let pert = perturbative_velocities(&a, &b, &p).unwrap();
        assert!(pert
            .particle1
            .iter()
            .chain(&pert.particle2)
            .all(|x| *x == 0.0));
    }

    #[test]
    fn hamiltonian_at_rest() {
        let p0 = params(0.0);
        let (q1, q2) = at_rest(&p0, 40, 0.0, 0.5);
        let (a, b) = phases(q1, vec![0.0; 41], q2, vec![0.0; 41]);
        let sol = numeric_velocities(&a, &b, &p0, 1e-14, 100).unwrap();
        let h = generalized_hamiltonian(&a, &b, &p0, &sol).unwrap();
        assert!((h - (1.0 * 2.0 + 1.4 * 2.0)).abs() < 1e-13);

        // independent double trapezoid of ρ_σ((t1-t2)² - r²)
        let c = 0.2;
        let p = params(c);
        let n = 40;
        let dt = 2.0 / n as f64;
        let mut quad = 0.0;
        for j in 0..=n {
            for k in 0..=n {
                let wj = if j == 0 || j == n { 0.5 * dt } else { dt };
                let wk = if k == 0 || k == n { 0.5 * dt } else { dt };
                let s = (j as f64 * dt - k as f64 * dt).powi(2) - 0.25;
                quad += wj * wk * (-s * s / (2.0 * p.sigma)).exp()
                    / (2.0 * std::f64::consts::PI * p.sigma).sqrt();
            }
        }
        let expected = 4.8 + 0.5 * c * quad;
        let sol = numeric_velocities(&a, &b, &p, 1e-14, 1000).unwrap();
        let h = generalized_hamiltonian(&a, &b, &p, &sol).unwrap();
        assert!((h - expected).abs() < 1e-12, "{h} vs {expected}");
        let h19 = first_order_hamiltonian(&a, &b, &p).unwrap();
        assert!((h19 - expected).abs() < 1e-12);
        let canon = canonical_action(&a, &b, &p).unwrap();
        assert!((canon + expected).abs() < 1e-12);
    }

    #[test]
    fn canonical_equals_action_for_free_momenta() {
        let p = params(0.0);
        let (pa, pb) = curved(&p, 50);
        let (m1, m2) = momentum_fields(pa.q(), pb.q(), &p).unwrap();
        let (a, b) = phases(pa.q().clone(), m1, pb.q().clone(), m2);
        let canon = canonical_action(&a, &b, &p).unwrap();
        let action = fokker_action(a.q(), b.q(), &p).unwrap().total;
        assert!((canon - action).abs() < 1e-9, "{canon} vs {action}");
    }

    #[test]
    fn legendre_identity_with_coupling() {
        let p = params(0.1);
        let (pa, pb) = curved(&p, 50);
        let (m1, m2) = momentum_fields(pa.q(), pb.q(), &p).unwrap();
        let (a, b) = phases(pa.q().clone(), m1, pb.q().clone(), m2);
        let canon = canonical_action(&a, &b, &p).unwrap();
        let action = fokker_action(a.q(), b.q(), &p).unwrap().total;
        assert!(
            (canon - action).abs() <= 1e-8 * action.abs(),
            "{canon} vs {action}"
        );
    }

    fn couplings() -> Vec<f64> {
        vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
    }

    #[test]
    fn momentum_recovery_is_second_order() {
        let mut errs = Vec::new();
        for c in couplings() {
            let p = params(c);
            let (a, b) = curved(&p, 40);
            let sol = perturbative_velocities(&a, &b, &p).unwrap();
            let (r1, r2) = recovered_momenta(&a, &b, &p, &sol).unwrap();
            let err = r1
                .iter()
                .zip(a.p())
                .chain(r2.iter().zip(b.p()))
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            errs.push(err);
        }
        let slope = log_log_slope(&couplings(), &errs);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn numeric_and_perturbative_differ_at_second_order() {
        let mut errs = Vec::new();
        for c in couplings() {
            let p = params(c);
            let (a, b) = curved(&p, 40);
            let pert = perturbative_velocities(&a, &b, &p).unwrap();
            let num = numeric_velocities(&a, &b, &p, 1e-15, 1000).unwrap();
            let err = pert
                .particle1
                .iter()
                .zip(&num.particle1)
                .chain(pert.particle2.iter().zip(&num.particle2))
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            errs.push(err);
        }
        let slope = log_log_slope(&couplings(), &errs);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn closed_hamiltonian_is_first_order() {
        let mut errs = Vec::new();
        for c in couplings() {
            let p = params(c);
            let (a, b) = curved(&p, 40);
            let sol = perturbative_velocities(&a, &b, &p).unwrap();
            let h = generalized_hamiltonian(&a, &b, &p, &sol).unwrap();
            let h19 = first_order_hamiltonian(&a, &b, &p).unwrap();
            errs.push((h - h19).abs());
        }
        let slope = log_log_slope(&couplings(), &errs);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn large_coupling_diverges() {
        let p = SystemParams {
            coupling: 1e3,
            ..params(0.0)
        };
        let (a, b) = curved(&p, 40);
        match numeric_velocities(&a, &b, &p, 1e-13, 500) {
            Err(Error::Divergence { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_solution_is_rejected() {
        let p = params(0.1);
        let (a, b) = curved(&p, 40);
        let mut sol = perturbative_velocities(&a, &b, &p).unwrap();
        sol.particle2.pop();
        assert!(matches!(
            generalized_hamiltonian(&a, &b, &p, &sol),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn free_line_is_stationary() {
        let p = params(0.0);
        let g = make_grid(2.0, 30).unwrap();
        let q1 = Trajectory::straight(g.clone(), &[0.0], &[0.6]).unwrap();
        let q2 = Trajectory::straight(g, &[1.0], &[0.8]).unwrap();
        let (m1, m2) = momentum_fields(&q1, &q2, &p).unwrap();
        let (a, b) = phases(q1, m1, q2, m2);
        let rep = stationarity_residuals(&a, &b, &p).unwrap();
        assert!(
            rep.q_bracket.sup_norm < 1e-8,
            "{:?}",
            rep.q_bracket.sup_norm
        );
        assert!(
            rep.p_bracket.sup_norm < 1e-8,
            "{:?}",
            rep.p_bracket.sup_norm
        );
    }

    #[test]
    fn inconsistent_momenta_show_in_q_bracket() {
        let p = params(0.0);
        let g = make_grid(2.0, 30).unwrap();
        let q1 = Trajectory::straight(g.clone(), &[0.0], &[0.6]).unwrap();
        let q2 = Trajectory::straight(g, &[1.0], &[0.8]).unwrap();
        let (a, b) = phases(q1, vec![0.0; 31], q2, vec![0.0; 31]);
        let rep = stationarity_residuals(&a, &b, &p).unwrap();
        // q̇ = 0.3 while p = 0 gives F = 0
        for r in &rep.q_bracket.particle1 {
            assert!((r[0] - 0.3).abs() < 1e-8);
        }
    }

    #[test]
    fn p_bracket_matches_force_on_consistent_momenta() {
        let p = params(0.05);
        let (pa, pb) = curved(&p, 30);
        let (m1, m2) = momentum_fields(pa.q(), pb.q(), &p).unwrap();
        let (a, b) = phases(pa.q().clone(), m1, pb.q().clone(), m2);
        let rep = stationarity_residuals(&a, &b, &p).unwrap();
        let sol = numeric_velocities(&a, &b, &p, 1e-14, 1000).unwrap();
        let force = explicit_force(&a, &b, &p, &sol);
        let pdot = time_derivative(a.p(), 1, a.grid().dt()).unwrap();
        for j in 1..30 {
            let expected = pdot[j] - force[j];
            assert!(
                (rep.p_bracket.particle1[j][0] - expected).abs() < 1e-7,
                "node {j}"
            );
        }
        // q̇ = F when p comes from the path itself
        assert!(rep.q_bracket.sup_norm < 1e-8);
    }
}
