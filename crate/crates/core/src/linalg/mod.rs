//! Numerical building blocks: pivoted Cholesky with its biorthogonal
//! factor, SPD solves, symmetric matrix roots and non-negative least
//! squares.

mod dense;
mod nnls;
mod pivoted;

pub use dense::{
    inv_sqrt_psd, min_eigenvalue, psd_roots, solve_spd, solve_spd_vec, symmetrize, PsdRoots,
    DEFAULT_OMEGA_JITTER,
};
pub use nnls::{nnls, NnlsSolution, NnlsSolver, DEFAULT_KKT_TOL};
pub use pivoted::{pivoted_cholesky, PivotedCholesky, SymmetricAccess, DEFAULT_RANK_TOL};
