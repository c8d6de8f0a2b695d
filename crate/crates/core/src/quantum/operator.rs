use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lattice::{lattice_for, Lattice, LatticeSpec};
use crate::action::rho;
use crate::error::{Error, Particle, Result};
use crate::numerics::trapezoid_weights;
use crate::trajectory::SystemParams;

/// Compressed sparse row matrix with complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dimension: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseMatrix {
    /// Rows given as `(column, value)` lists; columns are sorted per row.
    pub fn from_rows(dimension: usize, rows: Vec<Vec<(usize, Complex64)>>) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(dimension + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            dimension,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(pos) => self.vals[r.start + pos],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// `y = A x`. Each row is summed sequentially, so the result does not
    /// depend on the worker count.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, v) in self.row(i) {
                acc += v * x[c];
            }
            *yi = acc;
        });
    }

    /// `sup |A_ij - conj(A_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        (0..self.dimension)
            .into_par_iter()
            .map(|i| {
                self.row(i)
                    .map(|(j, v)| (v - self.entry(j, i).conj()).norm())
                    .fold(0.0f64, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dimension, self.dimension);
        for i in 0..self.dimension {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Which pieces of the operator to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorTerms {
    pub kinetic: bool,
    pub pq_dot: bool,
    pub interaction: bool,
}

impl Default for OperatorTerms {
    fn default() -> Self {
        OperatorTerms {
            kinetic: true,
            pq_dot: true,
            interaction: true,
        }
    }
}

impl OperatorTerms {
    pub fn kinetic_only() -> Self {
        OperatorTerms {
            kinetic: true,
            pq_dot: false,
            interaction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMetadata {
    pub sigma: f64,
    pub coupling: f64,
    pub m1: f64,
    pub m2: f64,
    pub dt1: f64,
    pub dt2: f64,
    pub dq: f64,
    pub hbar_tilde: f64,
    pub nt: usize,
    pub nq: usize,
    pub dimension: usize,
    pub nnz: usize,
    /// How the equal-time `δ(0)` of the second functional derivative is regularized.
    pub delta_regularization: String,
    pub terms: OperatorTerms,
}

/// Lattice action operator: `pq̇` terms minus the nonrelativistic Hamiltonian
/// with the Gaussian-regularized lightcone interaction.
#[derive(Debug, Clone)]
pub struct ActionOperator {
    pub matrix: SparseMatrix,
    pub metadata: OperatorMetadata,
    lattice: Lattice,
}

impl ActionOperator {
    pub fn dimension(&self) -> usize {
        self.matrix.dimension()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.matrix.apply(x, y)
    }
}

fn check_params(params: &SystemParams) -> Result<()> {
    if !(params.sigma > 0.0) {
        return Err(Error::InvalidRegularization(params.sigma));
    }
    if params.dim != 1 {
        return Err(Error::Dimension(format!(
            "the lattice is one-dimensional, got dim = {}",
            params.dim
        )));
    }
    let violations = params.violations();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(())
}

struct Mover {
    mass: f64,
    dt: f64,
    start: f64,
    end: f64,
}

fn movers(spec: &LatticeSpec, params: &SystemParams, which: &[Particle]) -> Vec<Mover> {
    which
        .iter()
        .map(|&particle| {
            let dt = params.horizon(particle) / spec.nt as f64;
            Mover {
                mass: params.mass(particle),
                dt,
                start: spec.endpoint(particle, false),
                end: spec.endpoint(particle, true),
            }
        })
        .collect()
}

fn assemble(
    lattice: &Lattice,
    params: &SystemParams,
    movers: &[Mover],
    terms: OperatorTerms,
) -> SparseMatrix {
    let spec = lattice.spec();
    let nt = spec.nt;
    let nq = spec.nq;
    let dq = spec.spacing();
    let hbar = spec.hbar_tilde;
    let weights: Vec<Vec<f64>> = movers
        .iter()
        .map(|m| trapezoid_weights(nt + 1, m.dt))
        .collect();
    let interacting = terms.interaction && movers.len() == 2 && params.coupling != 0.0;
    let half_c = 0.5 * params.coupling;
    let rows: Vec<Vec<(usize, Complex64)>> = (0..lattice.dimension())
        .into_par_iter()
        .map(|s| {
            let idx = lattice.multi_index(s);
            let paths: Vec<Vec<f64>> = movers
                .iter()
                .enumerate()
                .map(|(p, m)| {
                    let mut x = Vec::with_capacity(nt + 1);
                    x.push(m.start);
                    for j in 1..nt {
                        x.push(spec.point(idx[lattice.var(p, j)]));
                    }
                    x.push(m.end);
                    x
                })
                .collect();
            let mut row = Vec::with_capacity(1 + 2 * lattice.variables());
            let mut diag = 0.0;
            for (p, m) in movers.iter().enumerate() {
                let kin = if terms.kinetic {
                    hbar * hbar / (2.0 * m.mass * m.dt) / (dq * dq)
                } else {
                    0.0
                };
                for j in 1..nt {
                    let var = lattice.var(p, j);
                    let stride = lattice.stride(var);
                    let i = idx[var];
                    let hop = if terms.pq_dot {
                        let vel = (paths[p][j + 1] - paths[p][j - 1]) / (2.0 * m.dt);
                        Complex64::new(0.0, -hbar * vel / (2.0 * dq))
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    diag -= 2.0 * kin;
                    let up = Complex64::new(kin, 0.0) + hop;
                    if up != Complex64::new(0.0, 0.0) {
                        if i + 1 < nq {
                            row.push((s + stride, up));
                        }
                        if i > 0 {
                            row.push((s - stride, up.conj()));
                        }
                    }
                }
            }
            if interacting {
                let (t1, t2) = (movers[0].dt, movers[1].dt);
                let mut total = 0.0;
                for j in 0..=nt {
                    let mut inner = 0.0;
                    for k in 0..=nt {
                        let dt = j as f64 * t1 - k as f64 * t2;
                        let dx = paths[0][j] - paths[1][k];
                        inner += weights[1][k] * rho(dt * dt - dx * dx, params.sigma);
                    }
                    total += weights[0][j] * inner;
                }
                diag -= half_c * total;
            }
            row.push((s, Complex64::new(diag, 0.0)));
            row
        })
        .collect();
    SparseMatrix::from_rows(lattice.dimension(), rows)
}

fn metadata(
    lattice: &Lattice,
    params: &SystemParams,
    matrix: &SparseMatrix,
    terms: OperatorTerms,
) -> OperatorMetadata {
    let spec = lattice.spec();
    OperatorMetadata {
        sigma: params.sigma,
        coupling: params.coupling,
        m1: params.m1,
        m2: params.m2,
        dt1: params.t1 / spec.nt as f64,
        dt2: params.t2 / spec.nt as f64,
        dq: spec.spacing(),
        hbar_tilde: spec.hbar_tilde,
        nt: spec.nt,
        nq: spec.nq,
        dimension: matrix.dimension(),
        nnz: matrix.nnz(),
        delta_regularization: "delta(0) -> 1/dt".into(),
        terms,
    }
}

/// Assembles the full two-particle operator.
pub fn build_action_operator(lattice: &Lattice, params: &SystemParams) -> Result<ActionOperator> {
    build_action_operator_with(lattice, params, OperatorTerms::default())
}

pub fn build_action_operator_with(
    lattice: &Lattice,
    params: &SystemParams,
    terms: OperatorTerms,
) -> Result<ActionOperator> {
    check_params(params)?;
    if lattice.particles() != 2 {
        return Err(Error::InvalidLattice(
            "the action operator needs a two-particle lattice".into(),
        ));
    }
    let ms = movers(lattice.spec(), params, &[Particle::One, Particle::Two]);
    let matrix = assemble(lattice, params, &ms, terms);
    Ok(ActionOperator {
        metadata: metadata(lattice, params, &matrix, terms),
        matrix,
        lattice: lattice.clone(),
    })
}

/// Operator of one particle alone on its own `nq^(nt-1)` lattice. At zero
/// coupling the two-particle operator is the Kronecker sum of these.
pub fn single_particle_operator(
    spec: &LatticeSpec,
    params: &SystemParams,
    particle: Particle,
    terms: OperatorTerms,
) -> Result<ActionOperator> {
    check_params(params)?;
    let lattice = lattice_for(spec, 1)?;
    let ms = movers(spec, params, &[particle]);
    let matrix = assemble(&lattice, params, &ms, terms);
    Ok(ActionOperator {
        metadata: metadata(&lattice, params, &matrix, terms),
        matrix,
        lattice,
    })
}

/// Multiplication by the coordinate of variable `var`.
pub fn position_operator(lattice: &Lattice, var: usize) -> SparseMatrix {
    let spec = lattice.spec();
    let rows = (0..lattice.dimension())
        .map(|s| {
            vec![(
                s,
                Complex64::new(spec.point(lattice.multi_index(s)[var]), 0.0),
            )]
        })
        .collect();
    SparseMatrix::from_rows(lattice.dimension(), rows)
}

/// `(ħ̃/i)(1/Δt) ∂/∂q` for variable `var`, central differences with
/// Dirichlet walls.
pub fn momentum_operator(lattice: &Lattice, var: usize, dt: f64) -> SparseMatrix {
    let spec = lattice.spec();
    let stride = lattice.stride(var);
    let c = Complex64::new(0.0, -spec.hbar_tilde / (dt * 2.0 * spec.spacing()));
    let rows = (0..lattice.dimension())
        .map(|s| {
            let i = lattice.multi_index(s)[var];
            let mut row = Vec::with_capacity(2);
            if i + 1 < spec.nq {
                row.push((s + stride, c));
            }
            if i > 0 {
                row.push((s - stride, -c));
            }
            row
        })
        .collect();
    SparseMatrix::from_rows(lattice.dimension(), rows)
}
