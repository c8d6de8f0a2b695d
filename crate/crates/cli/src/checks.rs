//! Consistency checks shared by the `check` subcommands and the test suites.

use fokker_core::canonical::{canonical_action, stationarity_residuals, StationarityReport};
use fokker_core::numerics::time_derivative;
use fokker_core::solver::Endpoints;
use fokker_core::{
    el_residual, fokker_action, momentum_fields, richardson_functional_gradient, GradientTarget,
    GradientVariable, Particle, PhaseField, Result, SystemParams, TimeGrid, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Sine modes added on top of the straight lines.
const MODES: usize = 4;

/// Straight lines between the endpoints plus a random smooth bump that
/// vanishes at both ends: `Σ_k a_k sin(kπt/T)` with `|a_k| ≤ amplitude·T/k²`.
pub fn perturbed_pair(
    endpoints: &Endpoints,
    grids: (&TimeGrid, &TimeGrid),
    amplitude: f64,
    seed: u64,
) -> Result<(Trajectory, Trajectory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |grid: &TimeGrid, start: &[f64], end: &[f64]| {
        let dim = start.len();
        let horizon = grid.horizon();
        let coeffs: Vec<f64> = (0..dim * MODES)
            .map(|i| {
                let k = (i % MODES + 1) as f64;
                amplitude * horizon * rng.gen_range(-1.0..1.0) / (k * k)
            })
            .collect();
        Trajectory::from_fn(*grid, dim, |t| {
            let s = t / horizon;
            (0..dim)
                .map(|d| {
                    let bump: f64 = (0..MODES)
                        .map(|m| {
                            coeffs[d * MODES + m]
                                * ((m + 1) as f64 * std::f64::consts::PI * s).sin()
                        })
                        .sum();
                    start[d] + (end[d] - start[d]) * s + bump
                })
                .collect()
        })
    };
    let a = make(grids.0, &endpoints.q1_start, &endpoints.q1_end)?;
    let b = make(grids.1, &endpoints.q2_start, &endpoints.q2_end)?;
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientRow {
    pub quantity: &'static str,
    pub particle: Particle,
    /// `max_j |analytic_j - numeric_j| / max_j |numeric_j|` over interior nodes.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub step: f64,
    pub rows: Vec<GradientRow>,
    pub max_rel_error: f64,
}

fn compare(
    quantity: &'static str,
    particle: Particle,
    analytic: &[f64],
    numeric: &[f64],
    dim: usize,
) -> GradientRow {
    let interior = dim..analytic.len() - dim;
    let scale = numeric[interior.clone()]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let max_abs_error = interior
        .map(|i| (analytic[i] - numeric[i]).abs())
        .fold(0.0f64, f64::max);
    let max_rel_error = if scale > 0.0 {
        max_abs_error / scale
    } else {
        max_abs_error
    };
    GradientRow {
        quantity,
        particle,
        max_rel_error,
        max_abs_error,
        scale,
    }
}

/// Endpoint nodes carry half a trapezoid weight, so their nodal partials
/// divided by `dt` are half the density; the `d/dt` stencil next to an
/// endpoint needs the full value.
fn endpoint_density(mut field: Vec<f64>, dim: usize) -> Vec<f64> {
    let n = field.len();
    field[..dim].iter_mut().for_each(|x| *x *= 2.0);
    field[n - dim..].iter_mut().for_each(|x| *x *= 2.0);
    field
}

/// Analytic momenta and Euler-Lagrange residuals against Richardson
/// extrapolated finite differences of the discretized action.
pub fn gradient_check(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
    h: f64,
) -> Result<GradientReport> {
    let (p1, p2) = momentum_fields(traj1, traj2, params)?;
    let el = el_residual(traj1, traj2, params)?;
    let mut rows = Vec::with_capacity(4);
    for (particle, traj, p) in [(Particle::One, traj1, &p1), (Particle::Two, traj2, &p2)] {
        let grad = |variable| {
            richardson_functional_gradient(
                GradientTarget::Action,
                variable,
                particle,
                traj1,
                traj2,
                params,
                h,
            )
        };
        let dim = traj.dim();
        let num_p = endpoint_density(grad(GradientVariable::Velocity)?, dim);
        let num_f = grad(GradientVariable::Position)?;
        rows.push(compare("momentum", particle, p, &num_p, dim));
        let dp = time_derivative(&num_p, dim, traj.grid().dt())?;
        let num_el: Vec<f64> = num_f.iter().zip(&dp).map(|(f, d)| f - d).collect();
        let analytic_el: Vec<f64> = el.field(particle).iter().flatten().copied().collect();
        rows.push(compare("el_residual", particle, &analytic_el, &num_el, dim));
    }
    let max_rel_error = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradientReport {
        step: h,
        rows,
        max_rel_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendreReport {
    pub fokker_action: f64,
    pub canonical_action: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
}

/// Momenta from the action, velocities eliminated by fixed-point iteration,
/// canonical action compared with the original.
pub fn legendre_check(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<LegendreReport> {
    let original = fokker_action(traj1, traj2, params)?.total;
    let (phase1, phase2) = phase_fields(traj1, traj2, params)?;
    let canonical = canonical_action(&phase1, &phase2, params)?;
    let abs_diff = (canonical - original).abs();
    Ok(LegendreReport {
        fokker_action: original,
        canonical_action: canonical,
        abs_diff,
        rel_diff: abs_diff / original.abs(),
    })
}

/// Phase fields carrying the action's own momenta.
pub fn phase_fields(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<(PhaseField, PhaseField)> {
    let (p1, p2) = momentum_fields(traj1, traj2, params)?;
    Ok((
        PhaseField::new(traj1.clone(), p1)?,
        PhaseField::new(traj2.clone(), p2)?,
    ))
}

/// Canonical stationarity residuals at a trajectory pair with momenta from
/// the action.
pub fn canonical_stationarity(
    traj1: &Trajectory,
    traj2: &Trajectory,
    params: &SystemParams,
) -> Result<StationarityReport> {
    let (phase1, phase2) = phase_fields(traj1, traj2, params)?;
    stationarity_residuals(&phase1, &phase2, params)
}
