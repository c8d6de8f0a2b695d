//! Lattice realization of the action operator on wave functionals of two
//! 1-D trajectories with fixed end points.
//!
//! The discrete operator is
//!
//! ```text
//! Î = Σ_a Σ_j q̇_aj (ħ̃/i) D_aj + Σ_a Σ_j ħ̃²/(2 m_a Δt_a) Δ_aj - (e1e2/2) Σ_jk w_1j w_2k ρ_σ(s_jk)
//! ```
//!
//! with `D` and `Δ` the central first and second differences in the slice
//! coordinate and `q̇_aj` the central difference of the neighbouring slices.
//! Because `q̇_aj` does not depend on slice `j` itself, the symmetric and the
//! plain orderings coincide. The operator is Hermitian with purely
//! imaginary off-diagonal `pq̇` entries, so it is stored as a complex matrix.

mod lanczos;
mod lattice;
mod operator;
mod scan;

pub use lanczos::{eigenpairs, lowest_eigenvalues, EigenOptions, SpectrumResult, SpectrumTarget};
pub use lattice::{build_lattice, Lattice, LatticeSpec, DEFAULT_DIM_CAP};
pub use operator::{
    build_action_operator, build_action_operator_with, momentum_operator, position_operator,
    single_particle_operator, ActionOperator, OperatorMetadata, OperatorTerms, SparseMatrix,
};
pub use scan::{
    linspace, stationarity_scan, ScanParameter, ScanRow, ScanTable, StationaryCandidate,
};
