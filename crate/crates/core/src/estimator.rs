//! Representer-coefficient solvers for the mean-variance problem
//!
//! ```text
//! min_c  −cᵀKā + ½cᵀKΣKc + (λ/2)cᵀKc
//! ```
//!
//! whose first-order condition is `(KΣK + λK)ĉ = Kā`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{center_columns, cross_gram, GramSystem};
use crate::error::{Error, Result};
use crate::kernel::DerivativeKernel;
use crate::linalg::{pivoted_cholesky, solve_spd_vec, PivotedCholesky, DEFAULT_RANK_TOL};
use crate::multiindex::MultiIndex;

/// Largest `M` that `SolverPath::Auto` sends to the dense solver.
pub const AUTO_DENSE_MAX: usize = 500;
/// First-order residual tolerance of the dense path.
pub const FO_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverPath {
    Dense,
    Lowrank,
    Auto,
}

impl fmt::Display for SolverPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverPath::Dense => "dense",
            SolverPath::Lowrank => "lowrank",
            SolverPath::Auto => "auto",
        })
    }
}

impl FromStr for SolverPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SolverPath::Dense),
            "lowrank" => Ok(SolverPath::Lowrank),
            "auto" => Ok(SolverPath::Auto),
            _ => Err(Error::invalid(format!("unknown solver path '{s}' (dense|lowrank|auto)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    pub path: SolverPath,
    pub rank_tol: f64,
    /// `None` means `min(M, 2000)`.
    pub max_rank: Option<usize>,
}

impl FitOptions {
    pub fn new(lambda: f64) -> Self {
        FitOptions { lambda, path: SolverPath::Auto, rank_tol: DEFAULT_RANK_TOL, max_rank: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub c_hat: DVector<f64>,
    pub lambda: f64,
    /// Resolved path, never `Auto`.
    pub path: SolverPath,
    pub rank_used: usize,
    pub objective: f64,
    /// `‖(KΣK + λK)ĉ − Kā‖_∞ / (1 + ‖Kā‖_∞)`.
    pub residual: f64,
    /// The factorization hit `max_rank` before reaching `rank_tol`.
    pub truncated: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    Ok(())
}

/// `ĉᵀKΣKĉ` through `Σ = (1/N)ÃÃᵀ`, given `Kĉ`.
fn variance_term(sys: &GramSystem, kc: &DVector<f64>) -> f64 {
    let proj = sys.apply_at_vec(kc);
    let mean = proj.mean();
    proj.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sys.n() as f64
}

/// `Ĵ_λ` at coefficients `c`.
pub fn objective_at(sys: &GramSystem, c: &DVector<f64>, lambda: f64) -> f64 {
    let kc = &sys.k * c;
    -kc.dot(&sys.a_bar) + 0.5 * variance_term(sys, &kc) + 0.5 * lambda * c.dot(&kc)
}

pub fn objective(fit: &FitResult, sys: &GramSystem) -> f64 {
    objective_at(sys, &fit.c_hat, fit.lambda)
}

fn first_order_residual(sys: &GramSystem, c: &DVector<f64>, lambda: f64) -> f64 {
    let kc = &sys.k * c;
    let colvec = DMatrix::from_column_slice(kc.len(), 1, kc.as_slice());
    let sk = sys.sigma_apply(&colvec).column(0).into_owned();
    let ka = &sys.k * &sys.a_bar;
    let r = &sys.k * sk + &kc * lambda - &ka;
    r.amax() / (1.0 + ka.amax())
}

fn finish(sys: &GramSystem, c_hat: DVector<f64>, lambda: f64, path: SolverPath, rank: usize, truncated: bool) -> Result<FitResult> {
    if c_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fitted coefficients".into()));
    }
    let objective = objective_at(sys, &c_hat, lambda);
    let residual = first_order_residual(sys, &c_hat, lambda);
    Ok(FitResult { c_hat, lambda, path, rank_used: rank, objective, residual, truncated })
}

/// Dense solve of `(ΣK + λI)c = ā`.
///
/// Premultiplying by `K` gives the first-order condition, and `ΣK + λI` is
/// invertible for every `λ > 0` even when `K` is singular, so no jitter is
/// needed.
pub fn fit_dense(sys: &GramSystem, lambda: f64) -> Result<FitResult> {
    check_lambda(lambda)?;
    let m = sys.m();
    let mut sys_mat = sys.sigma_apply(&sys.k);
    for i in 0..m {
        sys_mat[(i, i)] += lambda;
    }
    let c = sys_mat
        .lu()
        .solve(&sys.a_bar)
        .ok_or_else(|| Error::Singular("(ΣK + λI) is singular".into()))?;
    finish(sys, c, lambda, SolverPath::Dense, m, false)
}

/// Reduced solve `(LᵀΣL + λI)c̃ = Lᵀā`, `ĉ = Bc̃` on a factorization of `sys.k`.
pub fn fit_lowrank(sys: &GramSystem, pc: &PivotedCholesky, lambda: f64) -> Result<FitResult> {
    check_lambda(lambda)?;
    if pc.l.nrows() != sys.m() {
        return Err(Error::DimensionMismatch { expected: sys.m(), got: pc.l.nrows(), context: "Cholesky factor rows" });
    }
    let m = pc.rank();
    let p = center_columns(&sys.apply_at(&pc.l));
    let mut reduced = p.transpose() * &p / sys.n() as f64;
    for i in 0..m {
        reduced[(i, i)] += lambda;
    }
    let rhs = pc.l.transpose() * &sys.a_bar;
    let ct = solve_spd_vec(&reduced, &rhs)?;
    let c = &pc.b * ct;
    finish(sys, c, lambda, SolverPath::Lowrank, m, pc.truncated)
}

pub fn fit(sys: &GramSystem, opts: &FitOptions) -> Result<FitResult> {
    check_lambda(opts.lambda)?;
    let dense = match opts.path {
        SolverPath::Dense => true,
        SolverPath::Lowrank => false,
        SolverPath::Auto => sys.m() <= AUTO_DENSE_MAX,
    };
    if dense {
        fit_dense(sys, opts.lambda)
    } else {
        let max_rank = opts.max_rank.unwrap_or(2000).min(sys.m());
        let pc = pivoted_cholesky(&sys.k, opts.rank_tol, max_rank)?;
        fit_lowrank(sys, &pc, opts.lambda)
    }
}

/// `D^α ĥ` at each row of `points`.
pub fn evaluate<K: DerivativeKernel + ?Sized>(
    fit: &FitResult,
    sys: &GramSystem,
    kernel: &K,
    points: &DMatrix<f64>,
    alpha: &MultiIndex,
) -> Result<DVector<f64>> {
    if fit.c_hat.len() != sys.m() {
        return Err(Error::DimensionMismatch { expected: sys.m(), got: fit.c_hat.len(), context: "fit coefficients" });
    }
    let kg = cross_gram(sys, kernel, points, alpha)?;
    Ok(kg.transpose() * &fit.c_hat)
}

/// Objective and fit for each `λ`; a stability aid, not a selection rule.
pub fn lambda_path(sys: &GramSystem, lambdas: &[f64], opts: &FitOptions) -> Result<Vec<FitResult>> {
    lambdas.iter().map(|&lambda| fit(sys, &FitOptions { lambda, ..*opts })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{build_gram, Dataset, GramOptions};
    use crate::kernel::KernelModel;
    use crate::multiindex::{enumerate, ActiveSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(n: usize, s: usize, ell: f64, seed: u64) -> (GramSystem, KernelModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = enumerate(1, s).unwrap();
        let x = DMatrix::from_fn(n, 1, |i, _| -2.0 + 4.0 * i as f64 / n as f64 + rng.random_range(0.0..0.1));
        let w = DMatrix::from_fn(n, set.m_s(), |_, _| rng.random_range(-1.0..1.0));
        let data = Dataset::new(x, None, w).unwrap();
        let k = KernelModel::gaussian(ell).unwrap();
        let sys = build_gram(&data, &k, &set, &ActiveSet::full(&set), &GramOptions::default()).unwrap();
        (sys, k)
    }

    #[test]
    fn single_sample_reduces_to_scaled_mean() {
        let set = enumerate(1, 1).unwrap();
        let data = Dataset::new(DMatrix::from_element(1, 1, 0.0), None, DMatrix::from_row_slice(1, 2, &[0.7, -0.2])).unwrap();
        let k = KernelModel::gaussian(1.0).unwrap();
        let sys = build_gram(&data, &k, &set, &ActiveSet::full(&set), &GramOptions::default()).unwrap();
        let fit = fit_dense(&sys, 0.5).unwrap();
        assert!((fit.c_hat - &sys.a_bar / 0.5).amax() < 1e-14);
    }

    #[test]
    fn heavy_regularization_shrinks_coefficients() {
        let (sys, _) = system(8, 1, 0.7, 1);
        let lambda = 1e6;
        let fit = fit_dense(&sys, lambda).unwrap();
        assert!(fit.c_hat.norm() <= sys.a_bar.norm() / lambda * (1.0 + 1e-6));
    }

    #[test]
    fn dense_matches_independent_normal_equation_solve() {
        // Spacing ≈ 0.4 against ℓ = 0.2 keeps K well conditioned, so ĉ itself is identified.
        let (sys, _) = system(10, 1, 0.2, 2);
        let lambda = 0.1;
        let fit = fit_dense(&sys, lambda).unwrap();
        assert!(fit.residual <= FO_TOL);
        let k = &sys.k;
        let normal = k * sys.sigma() * k + k * lambda;
        let rhs = k * &sys.a_bar;
        let reference = normal.svd(true, true).solve(&rhs, 0.0).unwrap();
        let diff = (&fit.c_hat - reference).amax();
        assert!(diff <= 1e-8, "{diff}");
    }

    #[test]
    fn lowrank_full_rank_agrees_with_dense() {
        let (sys, k) = system(20, 2, 1.0, 3);
        let lambda = 0.05;
        let dense = fit_dense(&sys, lambda).unwrap();
        let pc = pivoted_cholesky(&sys.k, 0.0, sys.m()).unwrap();
        let low = fit_lowrank(&sys, &pc, lambda).unwrap();
        let grid = DMatrix::from_fn(7, 1, |i, _| -1.5 + 0.5 * i as f64);
        for alpha in [0u32, 1, 2] {
            let a = MultiIndex::new(vec![alpha]);
            let td = evaluate(&dense, &sys, &k, &grid, &a).unwrap();
            let tl = evaluate(&low, &sys, &k, &grid, &a).unwrap();
            assert!((td - tl).amax() <= 1e-6);
        }
    }

    #[test]
    fn duplicated_point_rank_one() {
        let set = enumerate(1, 0).unwrap();
        let data = Dataset::new(
            DMatrix::from_element(3, 1, 0.4),
            None,
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -0.5]),
        )
        .unwrap();
        let k = KernelModel::gaussian(1.0).unwrap();
        let sys = build_gram(&data, &k, &set, &ActiveSet::full(&set), &GramOptions::default()).unwrap();
        let dense = fit_dense(&sys, 0.3).unwrap();
        let pc = pivoted_cholesky(&sys.k, DEFAULT_RANK_TOL, 3).unwrap();
        assert_eq!(pc.rank(), 1);
        let low = fit_lowrank(&sys, &pc, 0.3).unwrap();
        let fd = &sys.k * &dense.c_hat;
        let fl = &sys.k * &low.c_hat;
        assert!((fd - fl).amax() < 1e-12);
    }

    #[test]
    fn objective_properties() {
        let (sys, _) = system(12, 1, 0.8, 4);
        let lambda = 0.2;
        let fit = fit_dense(&sys, lambda).unwrap();
        assert_eq!(objective_at(&sys, &DVector::zeros(sys.m()), lambda), 0.0);
        assert!(fit.objective <= 0.0);
        let closed = -0.5 * fit.c_hat.dot(&(&sys.k * &sys.a_bar));
        assert!((fit.objective - closed).abs() <= 1e-10 * (1.0 + closed.abs()));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v = DVector::from_fn(sys.m(), |_, _| rng.random_range(-1.0..1.0));
            let v = v.normalize() * 1e-3;
            assert!(objective_at(&sys, &(&fit.c_hat + v), lambda) >= fit.objective - 1e-15);
        }
        // Ĵ_λ is increasing in λ at fixed coefficients.
        let f2 = fit_dense(&sys, 2.0 * lambda).unwrap();
        assert!(objective_at(&sys, &f2.c_hat, 2.0 * lambda) >= objective_at(&sys, &f2.c_hat, lambda));
    }

    #[test]
    fn evaluate_basics() {
        let (sys, k) = system(6, 1, 1.0, 6);
        let pts = DMatrix::from_column_slice(3, 1, &[-0.3, 0.1, 0.9]);
        let zero = FitResult {
            c_hat: DVector::zeros(sys.m()),
            lambda: 1.0,
            path: SolverPath::Dense,
            rank_used: sys.m(),
            objective: 0.0,
            residual: 0.0,
            truncated: false,
        };
        assert_eq!(evaluate(&zero, &sys, &k, &pts, &MultiIndex::zero(1)).unwrap(), DVector::zeros(3));
        let mut unit = zero.clone();
        unit.c_hat[2] = 1.0;
        let vals = evaluate(&unit, &sys, &k, &pts, &MultiIndex::new(vec![1])).unwrap();
        for j in 0..3 {
            let expect = k.deriv(&[0], &[1], &[sys.x[(2, 0)]], &[pts[(j, 0)]]);
            assert_eq!(vals[j], expect);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let (sys, k) = system(10, 1, 0.9, 7);
        let fit = fit_dense(&sys, 0.1).unwrap();
        let h = 1e-4;
        for &x0 in &[-0.8, 0.0, 0.6] {
            let pts = DMatrix::from_column_slice(3, 1, &[x0 - h, x0, x0 + h]);
            let f = evaluate(&fit, &sys, &k, &pts, &MultiIndex::zero(1)).unwrap();
            let d = evaluate(&fit, &sys, &k, &pts, &MultiIndex::new(vec![1])).unwrap();
            let fd = (f[2] - f[0]) / (2.0 * h);
            assert!((fd - d[1]).abs() / d[1].abs().max(1.0) <= 1e-5);
        }
    }

    #[test]
    fn lambda_validation() {
        let (sys, _) = system(4, 0, 1.0, 8);
        for bad in [0.0, -1.0, f64::NAN] {
            let err = fit(&sys, &FitOptions::new(bad)).unwrap_err();
            assert!(err.to_string().contains("lambda must be positive"));
        }
        assert_eq!("lowrank".parse::<SolverPath>().unwrap(), SolverPath::Lowrank);
        assert!("qr".parse::<SolverPath>().is_err());
    }
}
