use serde::{Deserialize, Serialize};

use crate::error::{Error, Particle, Result};

pub const DEFAULT_DIM_CAP: usize = 300_000;

/// Discretization of the wave-functional domain: both particles move on the
/// same 1-D box, each with `nt` time steps and fixed end slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub nt: usize,
    pub nq: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub hbar_tilde: f64,
    /// `[q1(0), q1(T1), q2(0), q2(T2)]`.
    pub endpoints: [f64; 4],
    pub dim_cap: usize,
}

impl LatticeSpec {
    pub fn endpoint(&self, particle: Particle, end: bool) -> f64 {
        self.endpoints[2 * particle.index() + usize::from(end)]
    }

    /// Interior slices per particle.
    pub fn slices(&self) -> usize {
        self.nt.saturating_sub(1)
    }

    pub fn spacing(&self) -> f64 {
        (self.q_max - self.q_min) / (self.nq as f64 + 1.0)
    }

    /// Grid point `i`; the walls themselves carry Dirichlet zeros.
    pub fn point(&self, i: usize) -> f64 {
        self.q_min + (i as f64 + 1.0) * self.spacing()
    }

    pub fn check(&self) -> Result<()> {
        if self.nt < 2 {
            return Err(Error::InvalidLattice(format!(
                "nt must be >= 2, got {}",
                self.nt
            )));
        }
        if self.nq < 2 {
            return Err(Error::InvalidLattice(format!(
                "nq must be >= 2, got {}",
                self.nq
            )));
        }
        if !(self.q_min.is_finite() && self.q_max.is_finite() && self.q_min < self.q_max) {
            return Err(Error::InvalidLattice(format!(
                "box [{}, {}] is empty or not finite",
                self.q_min, self.q_max
            )));
        }
        if !(self.hbar_tilde > 0.0 && self.hbar_tilde.is_finite()) {
            return Err(Error::InvalidLattice(format!(
                "hbar_tilde must be > 0, got {}",
                self.hbar_tilde
            )));
        }
        for (name, x) in ["q1_0", "q1_T", "q2_0", "q2_T"].iter().zip(self.endpoints) {
            if !(x >= self.q_min && x <= self.q_max) {
                return Err(Error::InvalidLattice(format!(
                    "endpoint {name} = {x} lies outside the box [{}, {}]",
                    self.q_min, self.q_max
                )));
            }
        }
        Ok(())
    }
}

/// Bijection between lattice multi-indices and flat state indices.
///
/// Variables are the interior slices, particle 1 first; variable 0 is the
/// most significant digit of the flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    spec: LatticeSpec,
    particles: usize,
    vars: usize,
    dimension: usize,
}

impl Lattice {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn variables(&self) -> usize {
        self.vars
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// Variable holding interior slice `slice` (1-based) of the `p`-th
    /// particle on this lattice.
    pub fn var(&self, p: usize, slice: usize) -> usize {
        p * self.spec.slices() + slice - 1
    }

    pub fn stride(&self, var: usize) -> usize {
        self.spec.nq.pow((self.vars - 1 - var) as u32)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let nq = self.spec.nq;
        let mut out = vec![0; self.vars];
        let mut rest = flat;
        for v in (0..self.vars).rev() {
            out[v] = rest % nq;
            rest /= nq;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.spec.nq + i)
    }

    /// Measure of one lattice cell, `Δq^variables`.
    pub fn cell_volume(&self) -> f64 {
        self.spec.spacing().powi(self.vars as i32)
    }
}

/// Lattice for both particles.
pub fn build_lattice(spec: &LatticeSpec) -> Result<Lattice> {
    lattice_for(spec, 2)
}

pub(crate) fn lattice_for(spec: &LatticeSpec, particles: usize) -> Result<Lattice> {
    spec.check()?;
    let vars = particles * spec.slices();
    let dimension = (spec.nq as f64).powi(vars as i32);
    if dimension > spec.dim_cap as f64 {
        return Err(Error::TooLarge {
            dimension,
            cap: spec.dim_cap,
        });
    }
    Ok(Lattice {
        spec: spec.clone(),
        particles,
        vars,
        dimension: spec.nq.pow(vars as u32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(nt: usize, nq: usize) -> LatticeSpec {
        LatticeSpec {
            nt,
            nq,
            q_min: -2.0,
            q_max: 2.0,
            hbar_tilde: 1.0,
            endpoints: [-0.5, -0.5, 0.5, 0.5],
            dim_cap: DEFAULT_DIM_CAP,
        }
    }

    #[test]
    fn counting() {
        assert_eq!(build_lattice(&spec(2, 4)).unwrap().dimension(), 16);
        assert_eq!(build_lattice(&spec(3, 8)).unwrap().dimension(), 4096);
        match build_lattice(&spec(4, 32)) {
            Err(Error::TooLarge { dimension, cap }) => {
                assert_eq!(dimension, 32f64.powi(6));
                assert_eq!(cap, DEFAULT_DIM_CAP);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn index_round_trip() {
        let l = build_lattice(&spec(3, 5)).unwrap();
        for flat in 0..l.dimension() {
            assert_eq!(l.flat_index(&l.multi_index(flat)), flat);
        }
        assert_eq!(l.stride(l.var(1, 2)), 1);
        assert_eq!(l.stride(0), 125);
    }

    #[test]
    fn endpoints_must_lie_in_box() {
        let mut s = spec(2, 4);
        s.endpoints[3] = 2.5;
        assert!(matches!(build_lattice(&s), Err(Error::InvalidLattice(_))));
    }

    #[test]
    fn grid_excludes_walls() {
        let s = spec(2, 3);
        assert_eq!(s.spacing(), 1.0);
        assert_eq!(s.point(0), -1.0);
        assert_eq!(s.point(2), 1.0);
    }
}
