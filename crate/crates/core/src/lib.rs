//! Multi-time Fokker two-charge dynamics in generalized canonical form.
//!
//! * [`trajectory`]: grids, discretized paths, parameters, validation.
//! * [`action`]: the regularized action, momentum fields, Euler-Lagrange residuals.
//! * [`canonical`]: velocity elimination, generalized Hamiltonian, canonical action.
//! * [`solver`]: fixed-endpoint stationary trajectories and a Newtonian reference.
//! * [`quantum`]: lattice action operator and its spectrum.

pub mod action;
pub mod canonical;
pub mod error;
pub mod json;
pub mod numerics;
pub mod quantum;
pub mod solver;
pub mod trajectory;

pub use action::{
    el_residual, fokker_action, momentum_fields, numeric_functional_gradient, regularized_delta,
    richardson_functional_gradient, ActionBreakdown, GradientTarget, GradientVariable,
    ResidualReport,
};
pub use error::{Error, Particle, Result};
pub use trajectory::{make_grid, validate, PhaseField, SystemParams, TimeGrid, Trajectory};
