//! Thick-restart Lanczos (Krylov-Schur form) for Hermitian operators, using
//! matrix-vector products only.
//!
//! Every basis vector is fully reorthogonalized (two Gram-Schmidt passes),
//! and the projected matrix is filled with exact Rayleigh quotients, so after
//! a restart the kept Ritz vectors and the residual direction simply become
//! the first columns of the next basis. A single Krylov sequence cannot see
//! a second copy of a degenerate eigenvalue, so the driver reruns on the
//! orthogonal complement of what it found until nothing lower turns up.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::operator::ActionOperator;
use crate::error::{Error, Result};

type C = Complex64;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumTarget {
    /// Algebraically lowest eigenvalues.
    Lowest,
    /// Eigenvalues closest to zero, found on the folded operator `A²`.
    SmallestMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub k: usize,
    /// Bound on `‖A x - λ x‖` for unit `x`.
    pub tol: f64,
    pub max_restarts: usize,
    /// Krylov basis size; `None` picks `max(2k + 20, 40)`.
    pub subspace: Option<usize>,
    pub seed: u64,
    pub target: SpectrumTarget,
}

impl EigenOptions {
    pub fn new(k: usize, tol: f64) -> Self {
        EigenOptions {
            k,
            tol,
            max_restarts: 5000,
            subspace: None,
            seed: 0,
            target: SpectrumTarget::Lowest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `‖Î Ψ - Λ Ψ‖` in the lattice norm for each pair.
    pub residuals: Vec<f64>,
    /// `Σ |Ψ|² Δq^D` for each eigenvector.
    pub norms: Vec<f64>,
    /// Lattice-normalized eigenvectors.
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<C>>,
    pub restarts: usize,
    pub matvecs: usize,
    pub target: SpectrumTarget,
}

/// Conjugate-linear in `a`. Partial sums over fixed chunks keep the result
/// independent of the worker count.
pub(crate) fn cdot(a: &[C], b: &[C]) -> C {
    let parts: Vec<C> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| {
            let mut s = C::new(0.0, 0.0);
            for (u, v) in x.iter().zip(y) {
                s += u.conj() * v;
            }
            s
        })
        .collect();
    parts.into_iter().fold(C::new(0.0, 0.0), |s, x| s + x)
}

pub(crate) fn norm(a: &[C]) -> f64 {
    cdot(a, a).re.sqrt()
}

fn axpy(y: &mut [C], alpha: C, x: &[C]) {
    y.par_iter_mut()
        .zip(x.par_iter())
        .for_each(|(yi, xi)| *yi += alpha * xi);
}

fn scale(y: &mut [C], s: f64) {
    y.par_iter_mut().for_each(|yi| *yi *= s);
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
    (0..n)
        .map(|_| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect()
}

/// Removes components along `basis` (two passes); returns the coefficients.
fn orthogonalize(w: &mut [C], basis: &[Vec<C>]) -> Vec<C> {
    let mut coeffs = vec![C::new(0.0, 0.0); basis.len()];
    for _ in 0..2 {
        for (c, v) in coeffs.iter_mut().zip(basis) {
            let h = cdot(v, w);
            axpy(w, -h, v);
            *c += h;
        }
    }
    coeffs
}

fn combine(basis: &[Vec<C>], coeffs: impl Iterator<Item = C>) -> Vec<C> {
    let n = basis[0].len();
    let mut out = vec![C::new(0.0, 0.0); n];
    for (v, c) in basis.iter().zip(coeffs) {
        axpy(&mut out, c, v);
    }
    out
}

/// Eigen-decomposition of a small Hermitian matrix, ascending.
fn small_eigen(h: DMatrix<C>) -> (Vec<f64>, DMatrix<C>) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

struct Found {
    vectors: Vec<Vec<C>>,
    values: Vec<f64>,
}

struct Krylov<'a> {
    apply: &'a (dyn Fn(&[C], &mut [C]) + Sync),
    n: usize,
    tol: f64,
    max_restarts: usize,
    subspace: Option<usize>,
    restarts: usize,
    matvecs: usize,
    history: Vec<f64>,
}

impl Krylov<'_> {
    /// The `want` lowest eigenpairs of the operator restricted to the
    /// orthogonal complement of `locked`.
    fn run(
        &mut self,
        want: usize,
        locked: &[Vec<C>],
        rng: &mut ChaCha8Rng,
        verify: &dyn Fn(&[Vec<C>], &[f64]) -> bool,
    ) -> Result<Found> {
        let n_eff = self.n - locked.len();
        let want = want.min(n_eff);
        if want == 0 {
            return Ok(Found {
                vectors: vec![],
                values: vec![],
            });
        }
        let m_max = self
            .subspace
            .unwrap_or((2 * want + 20).max(40))
            .max(want + 2)
            .min(n_eff);
        let keep = ((m_max + want) / 2).clamp(want, m_max.saturating_sub(1).max(want));
        let mut basis: Vec<Vec<C>> = Vec::with_capacity(m_max + 1);
        let mut h = DMatrix::<C>::zeros(m_max, m_max);
        let mut tol_est = self.tol;

        let mut start = random_vector(rng, self.n);
        orthogonalize(&mut start, locked);
        let s = norm(&start);
        scale(&mut start, 1.0 / s);
        basis.push(start);
        let mut col = 0;
        loop {
            // expand until the basis is full or the space is exhausted
            let mut residual: Vec<C>;
            let mut beta;
            loop {
                let mut w = vec![C::new(0.0, 0.0); self.n];
                (self.apply)(&basis[col], &mut w);
                self.matvecs += 1;
                let coeffs = orthogonalize(&mut w, &basis[..=col]);
                orthogonalize(&mut w, locked);
                for (i, c) in coeffs.iter().enumerate() {
                    h[(i, col)] = *c;
                    if i < col {
                        h[(col, i)] = c.conj();
                    }
                }
                h[(col, col)] = C::new(h[(col, col)].re, 0.0);
                beta = norm(&w);
                residual = w;
                col += 1;
                if col == m_max {
                    break;
                }
                let mut next = residual.clone();
                let mut nb = beta;
                let scale_ref = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
                if beta <= 1e-12 * scale_ref {
                    // invariant subspace: continue with a fresh direction
                    next = random_vector(rng, self.n);
                    orthogonalize(&mut next, &basis);
                    orthogonalize(&mut next, locked);
                    nb = norm(&next);
                }
                scale(&mut next, 1.0 / nb);
                basis.push(next);
            }
            let m = col;
            let (theta, y) = small_eigen(h.view((0, 0), (m, m)).into_owned());
            let est: Vec<f64> = (0..want).map(|i| beta * y[(m - 1, i)].norm()).collect();
            let worst = est.iter().copied().fold(0.0, f64::max);
            self.history.push(worst);
            let exhausted = m == n_eff;
            if worst <= tol_est || exhausted {
                let vectors: Vec<Vec<C>> = (0..want)
                    .map(|i| combine(&basis, (0..m).map(|r| y[(r, i)])))
                    .collect();
                let values = theta[..want].to_vec();
                if verify(&vectors, &values) {
                    return Ok(Found { vectors, values });
                }
                if exhausted {
                    return Err(Error::Eigensolver {
                        restarts: self.restarts,
                        history: self.history.clone(),
                    });
                }
                tol_est = (tol_est * 0.1).max(f64::EPSILON);
            }
            if self.restarts >= self.max_restarts {
                return Err(Error::Eigensolver {
                    restarts: self.restarts,
                    history: self.history.clone(),
                });
            }
            self.restarts += 1;
            // thick restart: keep the lowest Ritz vectors, then the residual direction
            let kept: Vec<Vec<C>> = (0..keep)
                .map(|i| combine(&basis, (0..m).map(|r| y[(r, i)])))
                .collect();
            basis = kept;
            h.fill(C::new(0.0, 0.0));
            for (i, t) in theta[..keep].iter().enumerate() {
                h[(i, i)] = C::new(*t, 0.0);
            }
            let mut next = residual;
            let mut nb = beta;
            if !(nb > 0.0) {
                next = random_vector(rng, self.n);
                nb = 1.0;
            }
            scale(&mut next, 1.0 / nb);
            orthogonalize(&mut next, &basis);
            orthogonalize(&mut next, locked);
            let nn = norm(&next);
            scale(&mut next, 1.0 / nn);
            basis.push(next);
            col = keep;
        }
    }

    /// Lowest `want` eigenpairs, rerunning on the complement of the found
    /// vectors so that repeated eigenvalues are not missed.
    fn lowest(
        &mut self,
        want: usize,
        rng: &mut ChaCha8Rng,
        verify: &dyn Fn(&[Vec<C>], &[f64]) -> bool,
    ) -> Result<Found> {
        let mut found = self.run(want, &[], rng, verify)?;
        for _ in 0..=want {
            if found.values.len() == self.n {
                break;
            }
            let extra = self.run(want, &found.vectors, rng, verify)?;
            let top = *found.values.last().expect("want >= 1");
            if extra.values.is_empty() || extra.values[0] >= top - self.tol {
                break;
            }
            let mut all: Vec<(f64, Vec<C>)> = found
                .values
                .into_iter()
                .zip(found.vectors)
                .chain(extra.values.into_iter().zip(extra.vectors))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            all.truncate(want);
            let (values, vectors) = all.into_iter().unzip();
            found = Found { vectors, values };
        }
        Ok(found)
    }
}

/// Rayleigh-Ritz of `apply` on the span of orthonormal `vectors`.
fn rayleigh_ritz(
    apply: &(dyn Fn(&[C], &mut [C]) + Sync),
    vectors: &[Vec<C>],
) -> (Vec<f64>, Vec<Vec<C>>, Vec<f64>) {
    let k = vectors.len();
    let n = vectors[0].len();
    let images: Vec<Vec<C>> = vectors
        .iter()
        .map(|v| {
            let mut w = vec![C::new(0.0, 0.0); n];
            apply(v, &mut w);
            w
        })
        .collect();
    let mut g = DMatrix::<C>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] = cdot(&vectors[i], &images[j]);
        }
    }
    let gh = (&g + g.adjoint()) * C::new(0.5, 0.0);
    let (values, z) = small_eigen(gh);
    let mut out_vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for (i, lambda) in values.iter().enumerate() {
        let x = combine(vectors, (0..k).map(|r| z[(r, i)]));
        let mut r = combine(&images, (0..k).map(|r| z[(r, i)]));
        axpy(&mut r, C::new(-lambda, 0.0), &x);
        residuals.push(norm(&r) / norm(&x));
        out_vectors.push(x);
    }
    (values, out_vectors, residuals)
}

/// Eigenpairs of the action operator selected by `options.target`.
pub fn eigenpairs(op: &ActionOperator, options: &EigenOptions) -> Result<SpectrumResult> {
    let n = op.dimension();
    if options.k == 0 || options.k > n {
        return Err(Error::InvalidArgument(format!(
            "requested {} eigenvalues of a {}-dimensional operator",
            options.k, n
        )));
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {}",
            options.tol
        )));
    }
    let apply = |x: &[C], y: &mut [C]| op.apply(x, y);
    let folded = |x: &[C], y: &mut [C]| {
        let mut t = vec![C::new(0.0, 0.0); x.len()];
        op.apply(x, &mut t);
        op.apply(&t, y);
    };
    let tol = options.tol;
    let verify = |vs: &[Vec<C>], _: &[f64]| rayleigh_ritz(&apply, vs).2.iter().all(|r| *r <= tol);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut krylov = Krylov {
        apply: match options.target {
            SpectrumTarget::Lowest => &apply,
            SpectrumTarget::SmallestMagnitude => &folded,
        },
        n,
        tol,
        max_restarts: options.max_restarts,
        subspace: options.subspace,
        restarts: 0,
        matvecs: 0,
        history: Vec::new(),
    };
    let found = krylov.lowest(options.k, &mut rng, &verify)?;
    let matvecs = match options.target {
        SpectrumTarget::Lowest => krylov.matvecs,
        SpectrumTarget::SmallestMagnitude => 2 * krylov.matvecs,
    };
    let (values, vectors, residuals) = rayleigh_ritz(&apply, &found.vectors);
    if residuals.iter().any(|r| !(*r <= tol)) {
        return Err(Error::Eigensolver {
            restarts: krylov.restarts,
            history: krylov.history,
        });
    }
    let cell = op.lattice().cell_volume();
    let mut eigenvectors = Vec::with_capacity(vectors.len());
    let mut norms = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        let s = norm(&v) * cell.sqrt();
        scale(&mut v, 1.0 / s);
        norms.push(cdot(&v, &v).re * cell);
        eigenvectors.push(v);
    }
    Ok(SpectrumResult {
        eigenvalues: values,
        residuals,
        norms,
        eigenvectors,
        restarts: krylov.restarts,
        matvecs,
        target: options.target,
    })
}

/// The `k` algebraically lowest eigenvalues with default options.
pub fn lowest_eigenvalues(op: &ActionOperator, k: usize, tol: f64) -> Result<SpectrumResult> {
    eigenpairs(op, &EigenOptions::new(k, tol))
}
