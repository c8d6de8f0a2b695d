use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::lanczos::{cdot, eigenpairs, EigenOptions};
use super::lattice::{build_lattice, LatticeSpec};
use super::operator::build_action_operator;
use crate::error::{Error, Result};
use crate::trajectory::{format_f64, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanParameter {
    #[serde(rename = "sigma")]
    Sigma,
    /// Both horizons together.
    #[serde(rename = "T")]
    Horizon,
    #[serde(rename = "hbar_tilde")]
    HbarTilde,
}

impl ScanParameter {
    pub fn name(self) -> &'static str {
        match self {
            ScanParameter::Sigma => "sigma",
            ScanParameter::Horizon => "T",
            ScanParameter::HbarTilde => "hbar_tilde",
        }
    }

    fn apply(
        self,
        value: f64,
        spec: &LatticeSpec,
        params: &SystemParams,
    ) -> (LatticeSpec, SystemParams) {
        let mut spec = spec.clone();
        let mut params = *params;
        match self {
            ScanParameter::Sigma => params.sigma = value,
            ScanParameter::Horizon => {
                params.t1 = value;
                params.t2 = value;
            }
            ScanParameter::HbarTilde => spec.hbar_tilde = value,
        }
        (spec, params)
    }
}

impl FromStr for ScanParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(ScanParameter::Sigma),
            "T" | "t" => Ok(ScanParameter::Horizon),
            "hbar_tilde" => Ok(ScanParameter::HbarTilde),
            other => Err(Error::InvalidArgument(format!(
                "unknown scan parameter '{other}' (expected sigma, T or hbar_tilde)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub value: f64,
    /// Eigenvalues ordered by branch; `None` when the point failed.
    pub eigenvalues: Option<Vec<f64>>,
    /// `dΛ/dparam` per branch; NaN where a neighbour is missing.
    pub derivatives: Vec<f64>,
    /// Overlap of each branch's eigenvector with its match at the previous
    /// successful point.
    pub overlaps: Vec<f64>,
    pub error: Option<String>,
}

/// A sign change of `dΛ/dparam` on one branch between two scan values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryCandidate {
    pub branch: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub parameter: ScanParameter,
    pub k: usize,
    pub rows: Vec<ScanRow>,
    pub candidates: Vec<StationaryCandidate>,
}

impl ScanTable {
    /// Columns `param, lambda_1..k, dlambda_1..k`; failed rows hold `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param");
        for i in 1..=self.k {
            write!(out, ",lambda_{i}").unwrap();
        }
        for i in 1..=self.k {
            write!(out, ",dlambda_{i}").unwrap();
        }
        out.push('\n');
        let cell = |x: f64| {
            if x.is_finite() {
                format_f64(x)
            } else {
                "nan".to_string()
            }
        };
        for row in &self.rows {
            out.push_str(&cell(row.value));
            match &row.eigenvalues {
                Some(ev) => ev
                    .iter()
                    .for_each(|x| write!(out, ",{}", cell(*x)).unwrap()),
                None => (0..self.k).for_each(|_| out.push_str(",nan")),
            }
            for d in &row.derivatives {
                write!(out, ",{}", cell(*d)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// `steps` equally spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![from],
        _ => (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    to
                } else {
                    from + (to - from) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    }
}

/// Greedy matching of current eigenvectors to reference branches by overlap.
fn match_branches(
    reference: &[Vec<Complex64>],
    current: &[Vec<Complex64>],
    cell: f64,
) -> Vec<(usize, f64)> {
    let k = reference.len();
    let mut overlap = vec![vec![0.0; k]; k];
    for (i, r) in reference.iter().enumerate() {
        for (j, c) in current.iter().enumerate() {
            overlap[i][j] = cdot(r, c).norm() * cell;
        }
    }
    let mut assigned = vec![None; k];
    let mut taken = vec![false; k];
    for _ in 0..k {
        let mut best = (usize::MAX, usize::MAX, -1.0);
        for i in (0..k).filter(|&i| assigned[i].is_none()) {
            for j in (0..k).filter(|&j| !taken[j]) {
                if overlap[i][j] > best.2 {
                    best = (i, j, overlap[i][j]);
                }
            }
        }
        assigned[best.0] = Some((best.1, best.2));
        taken[best.1] = true;
    }
    assigned
        .into_iter()
        .map(|a| a.expect("square assignment"))
        .collect()
}

fn derivative(xs: &[f64], ys: &[Option<f64>], r: usize) -> f64 {
    let n = xs.len();
    let at = |i: usize| ys[i];
    match (r, at(r)) {
        (_, None) => f64::NAN,
        (0, Some(y0)) => match at(1) {
            Some(y1) => (y1 - y0) / (xs[1] - xs[0]),
            None => f64::NAN,
        },
        (r, Some(yr)) if r + 1 == n => match at(r - 1) {
            Some(yp) => (yr - yp) / (xs[r] - xs[r - 1]),
            None => f64::NAN,
        },
        (r, Some(yr)) => match (at(r - 1), at(r + 1)) {
            (Some(yp), Some(yn)) => {
                let h1 = xs[r] - xs[r - 1];
                let h2 = xs[r + 1] - xs[r];
                -h2 / (h1 * (h1 + h2)) * yp
                    + (h2 - h1) / (h1 * h2) * yr
                    + h1 / (h2 * (h1 + h2)) * yn
            }
            _ => f64::NAN,
        },
    }
}

/// Rebuilds the operator at each value, tracks eigenvalue branches by
/// eigenvector overlap and differentiates them along the scan.
pub fn stationarity_scan(
    spec: &LatticeSpec,
    params: &SystemParams,
    parameter: ScanParameter,
    values: &[f64],
    options: &EigenOptions,
) -> Result<ScanTable> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a scan needs at least 3 values, got {}",
            values.len()
        )));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "scan values must be strictly increasing".into(),
        ));
    }
    let k = options.k;
    let mut rows = Vec::with_capacity(values.len());
    let mut reference: Option<Vec<Vec<Complex64>>> = None;
    for &value in values {
        let (s, p) = parameter.apply(value, spec, params);
        let attempt = build_lattice(&s)
            .and_then(|lattice| build_action_operator(&lattice, &p))
            .and_then(|op| {
                let cell = op.lattice().cell_volume();
                eigenpairs(&op, options).map(|r| (r, cell))
            });
        match attempt {
            Ok((result, cell)) => {
                let (order, overlaps): (Vec<usize>, Vec<f64>) = match &reference {
                    Some(prev) => match_branches(prev, &result.eigenvectors, cell)
                        .into_iter()
                        .unzip(),
                    None => ((0..k).collect(), vec![1.0; k]),
                };
                let eigenvalues = order.iter().map(|&j| result.eigenvalues[j]).collect();
                reference = Some(
                    order
                        .iter()
                        .map(|&j| result.eigenvectors[j].clone())
                        .collect(),
                );
                rows.push(ScanRow {
                    value,
                    eigenvalues: Some(eigenvalues),
                    derivatives: vec![],
                    overlaps,
                    error: None,
                });
            }
            Err(e) => rows.push(ScanRow {
                value,
                eigenvalues: None,
                derivatives: vec![],
                overlaps: vec![f64::NAN; k],
                error: Some(e.to_string()),
            }),
        }
    }
    for branch in 0..k {
        let ys: Vec<Option<f64>> = rows
            .iter()
            .map(|r| r.eigenvalues.as_ref().map(|e| e[branch]))
            .collect();
        for r in 0..rows.len() {
            let d = derivative(values, &ys, r);
            rows[r].derivatives.push(d);
        }
    }
    let mut candidates = Vec::new();
    for branch in 0..k {
        for r in 0..rows.len() - 1 {
            let (a, b) = (rows[r].derivatives[branch], rows[r + 1].derivatives[branch]);
            if a.is_finite() && b.is_finite() && (a * b < 0.0 || a == 0.0) {
                candidates.push(StationaryCandidate {
                    branch: branch + 1,
                    lower: values[r],
                    upper: values[r + 1],
                });
            }
        }
    }
    Ok(ScanTable {
        parameter,
        k,
        rows,
        candidates,
    })
}
