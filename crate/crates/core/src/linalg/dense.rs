use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default eigenvalue floor for `Ω̂^{-1/2}`, relative to the largest eigenvalue.
pub const DEFAULT_OMEGA_JITTER: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `M X = rhs` for symmetric positive definite `M`.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() || rhs.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: rhs.nrows(),
            context: "solve_spd right-hand side",
        });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

pub fn solve_spd_vec(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_spd(m, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(x.column(0).into_owned())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Square root and clipped inverse square root of a symmetric PSD matrix,
/// sharing one eigendecomposition.
#[derive(Debug, Clone)]
pub struct PsdRoots {
    /// `U diag(√max(λ, 0)) Uᵀ`.
    pub sqrt: DMatrix<f64>,
    /// `U diag(1/√max(λ, jitter·λ_max)) Uᵀ`.
    pub inv_sqrt: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    /// Eigenvalues raised to the floor.
    pub clipped: usize,
}

pub fn psd_roots(m: &DMatrix<f64>, jitter: f64) -> Result<PsdRoots> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
            context: "psd_roots square matrix",
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix root input".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_eig > 0.0) {
        return Err(Error::NotPsd("all eigenvalues are non-positive".into()));
    }
    let floor = jitter.max(0.0) * max_eig;
    let mut clipped = 0;
    let inv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < floor || l <= 0.0 {
                clipped += 1;
                1.0 / floor.max(f64::MIN_POSITIVE).sqrt()
            } else {
                1.0 / l.sqrt()
            }
        })
        .collect();
    let root: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let u = &eig.eigenvectors;
    let scale = |w: &[f64]| {
        let mut us = u.clone();
        for (j, &s) in w.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        symmetrize(&(&us * u.transpose()))
    };
    Ok(PsdRoots {
        sqrt: scale(&root),
        inv_sqrt: scale(&inv),
        eigenvalues: eig.eigenvalues.clone(),
        clipped,
    })
}

/// Symmetric `M^{-1/2}` with eigenvalues floored at `jitter · λ_max`.
pub fn inv_sqrt_psd(m: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    psd_roots(m, jitter).map(|r| r.inv_sqrt)
}
