//! Greedy pivoted Cholesky `K ≈ L Lᵀ` and the biorthogonal factor `B` with
//! `K B = L` and `Bᵀ L = I_m`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::TOL_PSD;

/// Default stopping tolerance on the trace residual, relative to `trace(K)`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Read access to a symmetric PSD matrix, one column at a time.
///
/// The factorization only ever touches the diagonal and the pivot columns,
/// so implementors may generate entries lazily.
pub trait SymmetricAccess {
    fn dim(&self) -> usize;
    fn diag(&self, i: usize) -> f64;
    fn column_into(&self, j: usize, out: &mut [f64]);
}

impl SymmetricAccess for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn diag(&self, i: usize) -> f64 {
        self[(i, i)]
    }

    fn column_into(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.column(j).as_slice());
    }
}

#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// `M × m` Cholesky factor.
    pub l: DMatrix<f64>,
    /// Pivot rows in selection order.
    pub pivots: Vec<usize>,
    /// `M × m` biorthogonal factor, non-zero only on pivot rows.
    pub b: DMatrix<f64>,
    /// `trace(K − L Lᵀ)` at termination.
    pub trace_residual: f64,
    pub trace: f64,
    /// Stopped at `max_rank` with the residual still above tolerance.
    pub truncated: bool,
}

impl PivotedCholesky {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }
}

/// Factors `k` by repeatedly pivoting on the largest residual diagonal.
///
/// Stops once `trace(K − L Lᵀ) ≤ rank_tol · trace(K)`, when `max_rank`
/// columns have been taken, or when the largest residual diagonal reaches
/// roundoff level. A residual diagonal below `−TOL_PSD · trace(K)` means
/// `K` was not PSD.
pub fn pivoted_cholesky<A: SymmetricAccess + ?Sized>(
    k: &A,
    rank_tol: f64,
    max_rank: usize,
) -> Result<PivotedCholesky> {
    let n = k.dim();
    if n == 0 {
        return Err(Error::invalid("cannot factor an empty matrix"));
    }
    if !(rank_tol >= 0.0) {
        return Err(Error::invalid("rank_tol must be non-negative"));
    }
    let max_rank = max_rank.min(n);

    let mut diag: Vec<f64> = (0..n).map(|i| k.diag(i)).collect();
    if let Some(i) = diag.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("diagonal entry {i}")));
    }
    let trace: f64 = diag.iter().sum();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    if let Some(&neg) = diag.iter().find(|&&v| v < -TOL_PSD * trace.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::NotPsd(format!("negative diagonal entry {neg}")));
    }
    // Residual diagonals this small are indistinguishable from cancellation noise.
    let noise_floor = 16.0 * f64::EPSILON * max_diag * n as f64;

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut is_pivot = vec![false; n];
    let mut col = vec![0.0; n];
    let residual = |diag: &[f64], is_pivot: &[bool]| -> f64 {
        diag.iter()
            .zip(is_pivot)
            .filter(|(_, &p)| !p)
            .map(|(&v, _)| v.max(0.0))
            .sum()
    };
    let mut trace_residual = residual(&diag, &is_pivot);

    while pivots.len() < max_rank && trace_residual > rank_tol * trace {
        let (p, &dp) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_pivot[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-pivoted row exists while rank < dim");
        if dp < -TOL_PSD * trace {
            return Err(Error::NotPsd(format!("negative pivot {dp} at row {p}")));
        }
        if dp <= noise_floor {
            break;
        }
        k.column_into(p, &mut col);
        for prev in &cols {
            let lp = prev[p];
            if lp != 0.0 {
                for (c, &v) in col.iter_mut().zip(prev.iter()) {
                    *c -= v * lp;
                }
            }
        }
        let root = dp.sqrt();
        for (i, c) in col.iter_mut().enumerate() {
            *c = if is_pivot[i] { 0.0 } else { *c / root };
        }
        col[p] = root;
        for (i, d) in diag.iter_mut().enumerate() {
            if !is_pivot[i] {
                *d -= col[i] * col[i];
            }
        }
        diag[p] = 0.0;
        is_pivot[p] = true;
        if let Some(i) = (0..n).find(|&i| !is_pivot[i] && diag[i] < -TOL_PSD * trace) {
            return Err(Error::NotPsd(format!("negative residual diagonal {} at row {i}", diag[i])));
        }
        pivots.push(p);
        cols.push(col.clone());
        trace_residual = residual(&diag, &is_pivot);
    }

    let m = pivots.len();
    let mut l = DMatrix::zeros(n, m);
    for (j, c) in cols.iter().enumerate() {
        l.column_mut(j).copy_from_slice(c);
    }

    // L restricted to the pivot rows is lower-triangular in pivot order;
    // B on those rows is its inverse transpose, zero elsewhere.
    let mut lp = DMatrix::zeros(m, m);
    for (r, &p) in pivots.iter().enumerate() {
        for c in 0..=r {
            lp[(r, c)] = l[(p, c)];
        }
    }
    let bp = back_substitute_inverse_transpose(&lp)?;
    let mut b = DMatrix::zeros(n, m);
    for (r, &p) in pivots.iter().enumerate() {
        for c in 0..m {
            b[(p, c)] = bp[(r, c)];
        }
    }

    let truncated = m == max_rank && trace_residual > rank_tol * trace;
    Ok(PivotedCholesky { l, pivots, b, trace_residual, trace, truncated })
}

// Solves Lᵀ X = I for lower-triangular L by back-substitution.
fn back_substitute_inverse_transpose(lower: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = lower.nrows();
    let mut x = DMatrix::zeros(m, m);
    for col in 0..m {
        for i in (0..m).rev() {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..m {
                acc -= lower[(k, i)] * x[(k, col)];
            }
            let piv = lower[(i, i)];
            if piv == 0.0 {
                return Err(Error::Singular("zero pivot in Cholesky factor".into()));
            }
            x[(i, col)] = acc / piv;
        }
    }
    Ok(x)
}
