//! Matrix assembly for the representer system and the test grid.
//!
//! Index conventions: the basis `{φ^(a)(x_i)}` is laid out multi-index-major
//! over the *active* multi-indices only, so `M = N · |active|`. The block
//! coefficient matrix `A` (M × N) is never stored densely: block `a` is
//! `diag(W[:, a])`, and the products with `A`, `Aᵀ` and the centering
//! matrix `H = I − 11ᵀ/N` are applied structurally.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::kernel::{DerivativeKernel, TOL_PSD};
use crate::linalg::min_eigenvalue;
use crate::multiindex::{ActiveSet, MultiIndex, MultiIndexSet};

/// Observed covariates, optional response and weights `w_α(z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N × d`.
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    /// `N × m_s`: column `a` holds `w_α(z_i)` for the `a`-th multi-index.
    pub w: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Option<DVector<f64>>, w: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one covariate column"));
        }
        if w.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.nrows(), context: "weight rows" });
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: y.len(), context: "response length" });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("response at row {i}")));
            }
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("covariate at row {}", i % n)));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("weight at row {}, column {}", i % n, i / n)));
        }
        Ok(Dataset { x, y, w })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Multi-indices whose weight column is not identically zero.
    pub fn active_set(&self, set: &MultiIndexSet) -> Result<ActiveSet> {
        self.check_set(set)?;
        let mask: Vec<bool> = (0..set.m_s()).map(|a| self.w.column(a).iter().any(|&v| v != 0.0)).collect();
        ActiveSet::from_mask(set, &mask)
            .map_err(|_| Error::invalid("every weight column is identically zero"))
    }

    fn check_set(&self, set: &MultiIndexSet) -> Result<()> {
        if set.d() != self.d() {
            return Err(Error::DimensionMismatch { expected: set.d(), got: self.d(), context: "covariate dimension" });
        }
        if self.w.ncols() != set.m_s() {
            return Err(Error::DimensionMismatch { expected: set.m_s(), got: self.w.ncols(), context: "weight columns" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramOptions {
    /// Eigenvalue check of `K` (costs a dense symmetric eigensolve).
    pub validate_psd: bool,
}

impl Default for GramOptions {
    fn default() -> Self {
        GramOptions { validate_psd: true }
    }
}

/// `K`, `A`, `ā` and `Σ` for one dataset.
#[derive(Debug, Clone)]
pub struct GramSystem {
    /// `M × M` Gram matrix of the active derivative basis.
    pub k: DMatrix<f64>,
    /// `N × d` sample covariates.
    pub x: DMatrix<f64>,
    /// `N × |active|` weights of the active blocks.
    pub weights: DMatrix<f64>,
    /// Row means of `A`.
    pub a_bar: DVector<f64>,
    pub active: ActiveSet,
    /// Active multi-indices in block order.
    pub indices: Vec<MultiIndex>,
    /// Diagonal jitter added to `K` to pass the PSD check (0 if none).
    pub jitter: f64,
}

impl GramSystem {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    pub fn blocks(&self) -> usize {
        self.indices.len()
    }

    /// `A u` for `u ∈ ℝ^N`.
    pub fn apply_a(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(self.m(), |r, _| {
            let (a, i) = (r / n, r % n);
            self.weights[(i, a)] * u[i]
        })
    }

    /// `Aᵀ X` for `X` with `M` rows.
    pub fn apply_at(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, x.ncols());
        for c in 0..x.ncols() {
            for a in 0..self.blocks() {
                for i in 0..n {
                    out[(i, c)] += self.weights[(i, a)] * x[(a * n + i, c)];
                }
            }
        }
        out
    }

    pub fn apply_at_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let x = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.apply_at(&x).column(0).into_owned()
    }

    /// `X A` for `X` with `M` columns.
    pub fn right_apply_a(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(x.nrows(), n, |r, i| {
            (0..self.blocks()).map(|a| x[(r, a * n + i)] * self.weights[(i, a)]).sum()
        })
    }

    /// Dense `A` (M × N); for oracles and small systems.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(self.m(), n, |r, i| if r % n == i { self.weights[(i, r / n)] } else { 0.0 })
    }

    /// Centered coefficient vectors `ã_i = a_i − ā` as columns (M × N).
    pub fn a_centered(&self) -> DMatrix<f64> {
        let mut a = self.a_matrix();
        for mut col in a.column_iter_mut() {
            col -= &self.a_bar;
        }
        a
    }

    /// `Σ = (1/N) Σ_i ã_i ã_iᵀ`.
    pub fn sigma(&self) -> DMatrix<f64> {
        let at = self.a_centered();
        &at * at.transpose() / self.n() as f64
    }

    /// `Σ X` without forming `Σ`.
    pub fn sigma_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let proj = center_columns(&self.apply_at(x));
        // A H proj; H is idempotent so proj is already centered.
        let mut out = DMatrix::zeros(self.m(), x.ncols());
        for c in 0..x.ncols() {
            for a in 0..self.blocks() {
                for i in 0..n {
                    out[(a * n + i, c)] = self.weights[(i, a)] * proj[(i, c)];
                }
            }
        }
        out / n as f64
    }
}

/// `H X` with `H = I − 11ᵀ/N`: subtracts each column's mean.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    let n = x.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Assembles the Gram system for `data` over the active multi-indices.
pub fn build_gram<K: DerivativeKernel + ?Sized>(
    data: &Dataset,
    kernel: &K,
    set: &MultiIndexSet,
    active: &ActiveSet,
    opts: &GramOptions,
) -> Result<GramSystem> {
    data.check_set(set)?;
    if active.positions().iter().any(|&p| p >= set.m_s()) {
        return Err(Error::invalid("active set does not belong to this multi-index set"));
    }
    let indices: Vec<MultiIndex> = active.positions().iter().map(|&p| set.indices()[p].clone()).collect();
    if let Some(m) = indices.iter().find(|m| m.order() > kernel.s_max()) {
        return Err(Error::UnsupportedOrder { order: m.order(), max: kernel.s_max() });
    }
    if let Some(kd) = kernel.dim() {
        if kd != data.d() {
            return Err(Error::DimensionMismatch { expected: kd, got: data.d(), context: "kernel input" });
        }
    }
    let n = data.n();
    let blocks = indices.len();
    let m = n * blocks;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.x.row(i).iter().cloned().collect()).collect();

    let mut k = DMatrix::zeros(m, m);
    k.as_mut_slice().par_chunks_mut(m).enumerate().for_each(|(col, out)| {
        let (b, j) = (col / n, col % n);
        let bo = indices[b].orders();
        for (row, v) in out.iter_mut().enumerate() {
            let (a, i) = (row / n, row % n);
            *v = kernel.deriv(indices[a].orders(), bo, &rows[i], &rows[j]);
        }
    });
    if let Some(pos) = k.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Gram entry ({}, {})", pos % m, pos / m)));
    }

    let mut jitter = 0.0;
    if opts.validate_psd {
        let trace = k.trace();
        let threshold = -TOL_PSD * trace / m as f64;
        if min_eigenvalue(&k) < threshold {
            jitter = 1e-10 * trace / m as f64;
            for i in 0..m {
                k[(i, i)] += jitter;
            }
            let min_eig = min_eigenvalue(&k);
            if min_eig < threshold {
                return Err(Error::NotPsd(format!(
                    "Gram matrix has eigenvalue {min_eig:.3e} below {threshold:.3e} even after jitter"
                )));
            }
        }
    }

    let weights = DMatrix::from_fn(n, blocks, |i, b| data.w[(i, active.positions()[b])]);
    // Column i of A is a_i; its only non-zero in row (a, i) is W[i, a].
    let a_bar = DVector::from_fn(m, |r, _| weights[(r % n, r / n)] / n as f64);

    Ok(GramSystem {
        k,
        x: data.x.clone(),
        weights,
        a_bar,
        active: active.clone(),
        indices,
        jitter,
    })
}

/// Grid-side matrices for testing the `alpha_test` derivative at `grid`.
#[derive(Debug, Clone)]
pub struct GridSystem {
    /// `n × d` test points.
    pub grid: DMatrix<f64>,
    pub alpha_test: MultiIndex,
    /// `M × n`: `D_x^b D_y^α K(x_i, ξ_j)`.
    pub k_g: DMatrix<f64>,
    /// `Aᵀ K A` (N × N).
    pub g: DMatrix<f64>,
    /// `H G`.
    pub g_tilde: DMatrix<f64>,
    /// `H Aᵀ K_G` (N × n).
    pub g_tilde_g: DMatrix<f64>,
    /// `H Aᵀ K ĉ`, present once a fit is supplied.
    pub h_tilde: Option<DVector<f64>>,
}

impl GridSystem {
    pub fn n_grid(&self) -> usize {
        self.grid.nrows()
    }
}

/// Cross-Gram between the sample basis and `φ^(α)(ξ_j)` for each grid point.
pub fn cross_gram<K: DerivativeKernel + ?Sized>(
    sys: &GramSystem,
    kernel: &K,
    points: &DMatrix<f64>,
    alpha: &MultiIndex,
) -> Result<DMatrix<f64>> {
    let d = sys.x.ncols();
    if points.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: points.ncols(), context: "grid dimension" });
    }
    if alpha.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: alpha.dim(), context: "derivative multi-index" });
    }
    if alpha.order() > kernel.s_max() {
        return Err(Error::UnsupportedOrder { order: alpha.order(), max: kernel.s_max() });
    }
    let n = sys.n();
    let m = sys.m();
    let xs: Vec<Vec<f64>> = (0..n).map(|i| sys.x.row(i).iter().cloned().collect()).collect();
    let mut out = DMatrix::zeros(m, points.nrows());
    out.as_mut_slice().par_chunks_mut(m).enumerate().for_each(|(j, col)| {
        let xi: Vec<f64> = points.row(j).iter().cloned().collect();
        for (row, v) in col.iter_mut().enumerate() {
            let (a, i) = (row / n, row % n);
            *v = kernel.deriv(sys.indices[a].orders(), alpha.orders(), &xs[i], &xi);
        }
    });
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cross-Gram entry".into()));
    }
    Ok(out)
}

/// Builds `K_G`, `G`, `G̃`, `G̃_G` and, given a fit, `h̃`.
pub fn build_grid<K: DerivativeKernel + ?Sized>(
    sys: &GramSystem,
    kernel: &K,
    fit: Option<&FitResult>,
    grid: &DMatrix<f64>,
    alpha_test: &MultiIndex,
) -> Result<GridSystem> {
    if grid.nrows() == 0 {
        return Err(Error::invalid("test grid is empty"));
    }
    let k_g = cross_gram(sys, kernel, grid, alpha_test)?;
    let at_k = sys.apply_at(&sys.k);
    let g = crate::linalg::symmetrize(&sys.right_apply_a(&at_k));
    let g_tilde = center_columns(&g);
    let g_tilde_g = center_columns(&sys.apply_at(&k_g));
    let h_tilde = match fit {
        Some(f) => {
            if f.c_hat.len() != sys.m() {
                return Err(Error::DimensionMismatch {
                    expected: sys.m(),
                    got: f.c_hat.len(),
                    context: "fit coefficients",
                });
            }
            let kc = &sys.k * &f.c_hat;
            let v = sys.apply_at_vec(&kc);
            let mean = v.sum() / v.len() as f64;
            Some(v.add_scalar(-mean))
        }
        None => None,
    };
    Ok(GridSystem {
        grid: grid.clone(),
        alpha_test: alpha_test.clone(),
        k_g,
        g,
        g_tilde,
        g_tilde_g,
        h_tilde,
    })
}
