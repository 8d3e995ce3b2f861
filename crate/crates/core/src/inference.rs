//! Grid evaluations `θ̂`, the plug-in covariance `Ω̂_λ`, the cone-projection
//! Wald statistic and its Monte Carlo calibration at the least favorable
//! null `θ = 0`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{build_grid, GramSystem, GridSystem};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::kernel::DerivativeKernel;
use crate::linalg::{min_eigenvalue, psd_roots, solve_spd, symmetrize, NnlsSolver, DEFAULT_KKT_TOL, DEFAULT_OMEGA_JITTER};
use crate::multiindex::MultiIndex;
use crate::rng;

/// Components with `θ̂_j ≥ −ZERO_TOL` count as inside the cone.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `H₀: D^α h ≥ 0` on the grid.
    Nonneg,
    /// `H₀: D^α h ≤ 0`, tested by flipping the sign of `θ̂`.
    Nonpos,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Nonneg => 1.0,
            Direction::Nonpos => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Nonneg => "nonneg",
            Direction::Nonpos => "nonpos",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonneg" => Ok(Direction::Nonneg),
            "nonpos" => Ok(Direction::Nonpos),
            _ => Err(Error::invalid(format!("unknown direction '{s}' (nonneg|nonpos)"))),
        }
    }
}

/// `θ̂ = K_Gᵀ ĉ`.
pub fn theta_hat(fit: &FitResult, grid: &GridSystem) -> Result<DVector<f64>> {
    if fit.c_hat.len() != grid.k_g.nrows() {
        return Err(Error::DimensionMismatch {
            expected: grid.k_g.nrows(),
            got: fit.c_hat.len(),
            context: "fit coefficients vs grid system",
        });
    }
    Ok(grid.k_g.transpose() * &fit.c_hat)
}

/// Intermediate matrices of the `Ω̂_λ` pipeline.
#[derive(Debug, Clone)]
pub struct OmegaWorkspace {
    /// `(1/N) H (λI + (1/N)HGH)⁻¹ G̃_G`; column `j` is `γ_j`.
    pub lambda_mat: DMatrix<f64>,
    /// `(I − diag h̃)G̃_G + (1/N)1(h̃ᵀG̃_G)`.
    pub b_mat: DMatrix<f64>,
    /// `(I − diag h̃)G̃ + (1/N)1(h̃ᵀG̃)`.
    pub v_mat: DMatrix<f64>,
    /// `(1/λ)(B − VΛ)`; entry `(i, j)` is `⟨F̂_i, û_j⟩`.
    pub s_mat: DMatrix<f64>,
}

impl OmegaWorkspace {
    pub fn omega(&self) -> DMatrix<f64> {
        let n = self.s_mat.nrows() as f64;
        symmetrize(&(self.s_mat.transpose() * &self.s_mat / n))
    }
}

// (I − diag h̃) X + (1/N) 1 (h̃ᵀ X)
fn influence_rows(h: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let top = h.transpose() * x / n as f64;
    DMatrix::from_fn(n, x.ncols(), |i, j| (1.0 - h[i]) * x[(i, j)] + top[j])
}

/// Plug-in covariance of `θ̂` at regularization `lambda`.
///
/// Row `i` of `V` is the representation of `F̂_i` against the centered
/// sample functionals, so the correction term enters as `VΛ`.
pub fn omega_hat(grid: &GridSystem, lambda: f64) -> Result<(DMatrix<f64>, OmegaWorkspace)> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let h = grid
        .h_tilde
        .as_ref()
        .ok_or_else(|| Error::invalid("grid system has no fitted h̃; build it with a fit"))?;
    let n = grid.g.nrows();
    let nf = n as f64;

    // HGH = H(HG)ᵀ since G is symmetric.
    let hgh = crate::assembly::center_columns(&grid.g_tilde.transpose());
    let mut m = symmetrize(&hgh) / nf;
    for i in 0..n {
        m[(i, i)] += lambda;
    }
    let solved = solve_spd(&m, &grid.g_tilde_g)
        .map_err(|_| Error::Singular("(λI + (1/N)HGH) could not be factored".into()))?;
    let lambda_mat = crate::assembly::center_columns(&solved) / nf;
    let b_mat = influence_rows(h, &grid.g_tilde_g);
    let v_mat = influence_rows(h, &grid.g_tilde);
    let s_mat = (&b_mat - &v_mat * &lambda_mat) / lambda;
    let ws = OmegaWorkspace { lambda_mat, b_mat, v_mat, s_mat };
    let omega = ws.omega();
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("plug-in covariance".into()));
    }
    Ok((omega, ws))
}

/// Result of the cone projection in the `Ω̂⁻¹` metric.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub w: f64,
    /// Projection of the sign-adjusted `θ̂` onto the non-negative orthant.
    pub c_star: DVector<f64>,
    /// `Ω̂^{-1/2}(c* − θ̂)`.
    pub residual: DVector<f64>,
    /// The statistic was zero without solving (θ̂ already in the cone).
    pub interior: bool,
}

/// `Ω̂^{±1/2}` and an NNLS solver on `Ω̂^{-1/2}`, shared by the observed
/// statistic and every Monte Carlo draw.
#[derive(Debug, Clone)]
pub struct WaldMetric {
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    solver: NnlsSolver,
    /// Eigenvalues raised to the jitter floor.
    pub clipped: usize,
    pub min_eigenvalue: f64,
}

impl WaldMetric {
    pub fn new(omega: &DMatrix<f64>, jitter: f64, kkt_tol: f64) -> Result<Self> {
        if omega.nrows() == 0 || omega.nrows() != omega.ncols() {
            return Err(Error::invalid("covariance must be a non-empty square matrix"));
        }
        let roots = psd_roots(omega, jitter).map_err(|e| match e {
            Error::NotPsd(msg) => Error::DegenerateCovariance(msg),
            other => other,
        })?;
        let solver = NnlsSolver::with_tol(&roots.inv_sqrt, kkt_tol)?;
        let min_eigenvalue = roots.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(WaldMetric { sqrt: roots.sqrt, inv_sqrt: roots.inv_sqrt, solver, clipped: roots.clipped, min_eigenvalue })
    }

    pub fn dim(&self) -> usize {
        self.sqrt.nrows()
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// `min_{c ≥ 0} (z − c)ᵀΩ̂⁻¹(z − c)` for `z` already in test orientation.
    pub fn project(&self, z: &DVector<f64>) -> Result<WaldResult> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len(), context: "grid evaluations" });
        }
        if z.iter().all(|&v| v >= -ZERO_TOL) {
            return Ok(WaldResult {
                w: 0.0,
                c_star: z.map(|v| v.max(0.0)),
                residual: DVector::zeros(z.len()),
                interior: true,
            });
        }
        let b = &self.inv_sqrt * z;
        let sol = self.solver.solve(&b)?;
        Ok(WaldResult { w: sol.sq_norm, c_star: sol.c_star, residual: sol.residual, interior: false })
    }

    /// `W_N = N · min_{c ≥ 0}(θ̂ − c)ᵀΩ̂⁻¹(θ̂ − c)` after the direction sign.
    pub fn statistic(&self, theta: &DVector<f64>, n_samples: usize, direction: Direction) -> Result<WaldResult> {
        if n_samples == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let mut res = self.project(&(theta * direction.sign()))?;
        res.w *= n_samples as f64;
        Ok(res)
    }

    /// Null draws `W_r` with `Z_r ~ N(0, Ω̂)`; draw `r` uses stream `r` of `seed`.
    pub fn null_draws(&self, reps: usize, seed: u64) -> Result<Vec<f64>> {
        let n = self.dim();
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng::stream(seed, r as u64);
                let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = &self.sqrt * xi;
                self.project(&z).map(|p| p.w)
            })
            .collect()
    }

    pub fn pvalue(&self, w_obs: f64, reps: usize, seed: u64) -> Result<McSummary> {
        if reps < 1 {
            return Err(Error::invalid("Monte Carlo replications must be at least 1"));
        }
        let draws = self.null_draws(reps, seed)?;
        Ok(McSummary::from_draws(&draws, w_obs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSummary {
    pub p_value: f64,
    pub reps: usize,
    /// Draws with `W_r ≥ W_obs`.
    pub exceed: usize,
    /// Fraction of draws with `W_r = 0`.
    pub zero_fraction: f64,
    pub mean: f64,
}

impl McSummary {
    fn from_draws(draws: &[f64], w_obs: f64) -> Self {
        let reps = draws.len();
        let exceed = draws.iter().filter(|&&w| w >= w_obs).count();
        let zeros = draws.iter().filter(|&&w| w == 0.0).count();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        McSummary {
            p_value: (1 + exceed) as f64 / (reps + 1) as f64,
            reps,
            exceed,
            zero_fraction: zeros as f64 / reps as f64,
            mean,
        }
    }
}

pub fn wald_statistic(
    theta: &DVector<f64>,
    omega: &DMatrix<f64>,
    n_samples: usize,
    direction: Direction,
) -> Result<WaldResult> {
    WaldMetric::new(omega, DEFAULT_OMEGA_JITTER, DEFAULT_KKT_TOL)?.statistic(theta, n_samples, direction)
}

/// Monte Carlo p-value `(1 + #{W_r ≥ W_obs}) / (reps + 1)` at `θ = 0`.
pub fn pvalue_mc(omega: &DMatrix<f64>, w_obs: f64, reps: usize, seed: u64) -> Result<McSummary> {
    WaldMetric::new(omega, DEFAULT_OMEGA_JITTER, DEFAULT_KKT_TOL)?.pvalue(w_obs, reps, seed)
}

/// `(ZᵀΩ⁻¹Z, ‖Π‖² + ‖Z − Π‖²)` in the `Ω⁻¹` norm, with `Π` the projection
/// of `Z` onto the non-negative orthant.
pub fn moreau_check(z: &DVector<f64>, omega: &DMatrix<f64>) -> Result<(f64, f64)> {
    if omega.clone().cholesky().is_none() {
        return Err(Error::NotPsd("Moreau check needs a positive definite matrix".into()));
    }
    let metric = WaldMetric::new(omega, 0.0, DEFAULT_KKT_TOL)?;
    let pi = metric.project(z)?.c_star;
    let d = &metric.inv_sqrt;
    let norm = |v: &DVector<f64>| (d * v).norm_squared();
    Ok((norm(z), norm(&pi) + norm(&(z - &pi))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOptions {
    pub alpha_test: MultiIndex,
    pub direction: Direction,
    pub mc_reps: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub omega_jitter: f64,
    pub kkt_tol: f64,
}

impl TestOptions {
    pub fn new(alpha_test: MultiIndex) -> Self {
        TestOptions {
            alpha_test,
            direction: Direction::Nonneg,
            mc_reps: 10_000,
            seed: 0,
            levels: vec![0.01, 0.05, 0.10],
            omega_jitter: DEFAULT_OMEGA_JITTER,
            kkt_tol: DEFAULT_KKT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub level: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub grid: Vec<Vec<f64>>,
    pub alpha_test: MultiIndex,
    pub direction: Direction,
    pub n_samples: usize,
    pub theta_hat: Vec<f64>,
    pub omega_hat: Vec<Vec<f64>>,
    pub omega_min_eigenvalue: f64,
    pub w_n: f64,
    pub c_star: Vec<f64>,
    pub p_value: f64,
    pub mc_reps: usize,
    pub mc_zero_fraction: f64,
    pub seed: u64,
    pub decision_at: Vec<Decision>,
    pub warnings: Vec<String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Grid assembly, `θ̂`, `Ω̂_λ`, `W_N` and its p-value for one fitted system.
pub fn run_test<K: DerivativeKernel + ?Sized>(
    sys: &GramSystem,
    kernel: &K,
    fit: &FitResult,
    points: &DMatrix<f64>,
    opts: &TestOptions,
) -> Result<TestReport> {
    if let Some(l) = opts.levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::invalid(format!("test level {l} outside (0, 1)")));
    }
    if opts.mc_reps < 100 {
        return Err(Error::invalid("test.mc_reps must be at least 100"));
    }
    let grid = build_grid(sys, kernel, Some(fit), points, &opts.alpha_test)?;
    let theta = theta_hat(fit, &grid)?;
    let (omega, _) = omega_hat(&grid, fit.lambda)?;
    let trace = omega.trace();
    if !(trace > 0.0) {
        return Err(Error::DegenerateCovariance(format!("trace(Ω̂) = {trace:.3e}")));
    }
    let min_eig = min_eigenvalue(&omega);
    let mut warnings = Vec::new();
    if min_eig < -1e-8 * trace {
        warnings.push(format!("Ω̂ has eigenvalue {min_eig:.3e} below −1e-8·trace; clipped"));
    }
    let metric = WaldMetric::new(&omega, opts.omega_jitter, opts.kkt_tol)?;
    if metric.clipped > 0 {
        warnings.push(format!(
            "{} eigenvalue(s) of Ω̂ raised to the jitter floor (near-duplicate grid points?)",
            metric.clipped
        ));
    }
    let wald = metric.statistic(&theta, sys.n(), opts.direction)?;
    let mc = metric.pvalue(wald.w, opts.mc_reps, opts.seed)?;
    let decision_at = opts.levels.iter().map(|&level| Decision { level, reject: mc.p_value <= level }).collect();
    Ok(TestReport {
        grid: rows(points),
        alpha_test: opts.alpha_test.clone(),
        direction: opts.direction,
        n_samples: sys.n(),
        theta_hat: theta.iter().cloned().collect(),
        omega_hat: rows(&omega),
        omega_min_eigenvalue: min_eig,
        w_n: wald.w,
        c_star: wald.c_star.iter().cloned().collect(),
        p_value: mc.p_value,
        mc_reps: opts.mc_reps,
        mc_zero_fraction: mc.zero_fraction,
        seed: opts.seed,
        decision_at,
        warnings,
    })
}
