//! Small numerical helpers shared by the action, canonical and solver modules.
//!
//! Every floating-point reduction in the crate goes through [`pairwise_sum`]
//! over a vector whose order is fixed by the data layout, never by the thread
//! schedule. Parallel code maps rows to partial sums and collects them in
//! order, so results are bit-identical for any worker count.

use crate::error::{Error, Result};

const PAIRWISE_BLOCK: usize = 8;

/// Fixed-order pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Composite trapezoid weights for `nodes` equally spaced points.
pub fn trapezoid_weights(nodes: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![dt; nodes];
    if let Some(first) = w.first_mut() {
        *first = 0.5 * dt;
    }
    if let Some(last) = w.last_mut() {
        *last = 0.5 * dt;
    }
    w
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Second-order finite-difference time derivative of a node-major field of
/// `dim`-vectors: central differences inside, one-sided three-point stencils
/// at both ends.
///
/// The endpoint stencils are written so that reversing the path negates the
/// result bit for bit.
pub fn time_derivative(values: &[f64], dim: usize, dt: f64) -> Result<Vec<f64>> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::Dimension(format!(
            "field of length {} is not a multiple of dim {}",
            values.len(),
            dim
        )));
    }
    let nodes = values.len() / dim;
    if nodes < 3 {
        return Err(Error::InsufficientResolution { nodes });
    }
    let n = nodes - 1;
    let inv = 1.0 / (2.0 * dt);
    let at = |j: usize, i: usize| values[j * dim + i];
    let mut out = vec![0.0; values.len()];
    for i in 0..dim {
        out[i] = (4.0 * (at(1, i) - at(0, i)) - (at(2, i) - at(0, i))) * inv;
        for j in 1..n {
            out[j * dim + i] = (at(j + 1, i) - at(j - 1, i)) * inv;
        }
        out[n * dim + i] = (4.0 * (at(n, i) - at(n - 1, i)) - (at(n, i) - at(n - 2, i))) * inv;
    }
    Ok(out)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let w = trapezoid_weights(11, 0.1);
        let s: f64 = w
            .iter()
            .enumerate()
            .map(|(j, w)| w * (j as f64 * 0.1))
            .sum();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_quadratic_is_exact_inside() {
        // second-order stencils are exact on quadratics, including the ends
        let dt = 0.01;
        let q: Vec<f64> = (0..=100).map(|j| (j as f64 * dt).powi(2)).collect();
        let v = time_derivative(&q, 1, dt).unwrap();
        for (j, vj) in v.iter().enumerate() {
            assert!((vj - 2.0 * j as f64 * dt).abs() < 1e-10, "node {j}");
        }
    }

    #[test]
    fn too_few_nodes() {
        assert!(matches!(
            time_derivative(&[0.0, 1.0], 1, 0.1),
            Err(Error::InsufficientResolution { nodes: 2 })
        ));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1e-3, 1e-2, 1e-1];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((log_log_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
