//! The `validate` command: self-contained numerical oracle suites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use shapekit::linalg::pivoted_cholesky;
use shapekit::oracle::{exhaustive_cone_distance, feature_space_fit, PolyFeatureKernel};
use shapekit::{
    build_grid, build_gram, enumerate, evaluate, fd_check, fit_dense, fit_lowrank, moreau_check, omega_hat,
    pvalue_mc, theta_hat, wald_statistic, ActiveSet, Dataset, Direction, GramOptions, KernelModel, MultiIndex,
    Result,
};

/// One oracle comparison: the observed discrepancy against its tolerance.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error <= self.tolerance
    }
}

fn outcome(name: &'static str, error: f64, tolerance: f64, scale: f64) -> OracleOutcome {
    OracleOutcome { name, error, tolerance: tolerance * scale }
}

fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.1
}

fn kernel_fd(rng: &mut ChaCha8Rng) -> Result<f64> {
    let set = enumerate(2, 2)?;
    let mut worst: f64 = 0.0;
    for l in [0.5, 1.0, 2.0] {
        let k = KernelModel::gaussian(l)?;
        for _ in 0..5 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            for a in set.indices() {
                for b in set.indices() {
                    worst = worst.max(fd_check(&k, a, b, &x, &y, 1e-4)?.rel_err);
                }
            }
        }
    }
    Ok(worst)
}

fn dense_vs_lowrank(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = 20;
        let set = enumerate(1, 2)?;
        let x = DMatrix::from_fn(n, 1, |i, _| -2.0 + 4.0 * i as f64 / (n - 1) as f64 + rng.random_range(-0.05..0.05));
        let w = DMatrix::from_fn(n, set.m_s(), |_, _| rng.random_range(-1.0..1.0));
        let data = Dataset::new(x, None, w)?;
        let k = KernelModel::gaussian(rng.random_range(0.5..1.0))?;
        let sys = build_gram(&data, &k, &set, &ActiveSet::full(&set), &GramOptions::default())?;
        let lambda = rng.random_range(0.05..0.5);
        let dense = fit_dense(&sys, lambda)?;
        let pc = pivoted_cholesky(&sys.k, 0.0, sys.m())?;
        let low = fit_lowrank(&sys, &pc, lambda)?;
        let grid = DMatrix::from_fn(9, 1, |i, _| -2.0 + 0.5 * i as f64);
        for o in 0..=2 {
            let a = MultiIndex::new(vec![o]);
            let td = evaluate(&dense, &sys, &k, &grid, &a)?;
            let tl = evaluate(&low, &sys, &k, &grid, &a)?;
            worst = worst.max((td - tl).amax());
        }
    }
    Ok(worst)
}

fn nnls_brute_force(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..100 {
        let n = 2 + t % 2;
        let omega = random_pd(n, rng);
        let theta = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let w = wald_statistic(&theta, &omega, 1, Direction::Nonneg)?.w;
        let reference = exhaustive_cone_distance(&theta, &omega)?;
        worst = worst.max((w - reference).abs() / reference.abs().max(1.0));
    }
    Ok(worst)
}

fn feature_space_omega(rng: &mut ChaCha8Rng) -> Result<f64> {
    let kernel = PolyFeatureKernel::new(2);
    let set = enumerate(2, 1)?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = 12;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(n, set.m_s(), |_, _| rng.random_range(-1.0..1.0));
        let data = Dataset::new(x, None, w)?;
        let grid = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let alpha = MultiIndex::new(vec![1, 0]);
        let lambda = rng.random_range(0.1..1.0);
        let direct = feature_space_fit(&kernel, &data, &set, lambda, &grid, &alpha)?;
        let sys = build_gram(&data, &kernel, &set, &ActiveSet::full(&set), &GramOptions::default())?;
        let fit = fit_dense(&sys, lambda)?;
        let gs = build_grid(&sys, &kernel, Some(&fit), &grid, &alpha)?;
        let (omega, _) = omega_hat(&gs, lambda)?;
        worst = worst.max((omega - &direct.omega).amax());
        worst = worst.max((theta_hat(&fit, &gs)? - &direct.theta).amax());
    }
    Ok(worst)
}

fn moreau(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let omega = random_pd(5, rng);
        let z = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
        let (lhs, rhs) = moreau_check(&z, &omega)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `(|P(W = 0) − ½|, |p(6.635) − ½ P(χ²₁ > 6.635)|)` for `n = 1`, `Ω = 1`.
fn chi_bar(seed: u64) -> Result<(f64, f64)> {
    let one = DMatrix::from_element(1, 1, 1.0);
    let zero = pvalue_mc(&one, 0.0, 10_000, seed)?;
    let w_obs = 6.635;
    let tail = ChiSquared::new(1.0).expect("one degree of freedom").sf(w_obs);
    let p = pvalue_mc(&one, w_obs, 10_000, seed.wrapping_add(1))?;
    Ok(((zero.zero_fraction - 0.5).abs(), (p.p_value - 0.5 * tail).abs()))
}

/// Runs every oracle suite. `tolerance_scale` multiplies each tolerance.
pub fn run_oracles(seed: u64, tolerance_scale: f64) -> Result<Vec<OracleOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = tolerance_scale;
    let (zero_err, tail_err) = chi_bar(seed)?;
    Ok(vec![
        outcome("kernel finite differences", kernel_fd(&mut rng)?, 1e-5, s),
        outcome("dense vs low-rank solve", dense_vs_lowrank(&mut rng)?, 1e-6, s),
        outcome("cone projection vs exhaustive faces", nnls_brute_force(&mut rng)?, 1e-9, s),
        outcome("plug-in covariance vs feature space", feature_space_omega(&mut rng)?, 1e-8, s),
        outcome("Moreau decomposition", moreau(&mut rng)?, 1e-9, s),
        outcome("chi-bar mass at zero (n = 1)", zero_err, 0.02, s),
        outcome("chi-bar tail at 6.635 (n = 1)", tail_err, 0.003, s),
    ])
}

/// Prints one line per oracle; returns whether all passed.
pub fn cmd_validate(seed: u64, tolerance_scale: f64) -> crate::error::CliResult<bool> {
    let outcomes = run_oracles(seed, tolerance_scale)?;
    let mut ok = true;
    for o in &outcomes {
        let pass = o.passed();
        ok &= pass;
        println!(
            "{:<40} {}  error {:.3e}  tolerance {:.3e}",
            o.name,
            if pass { "PASS" } else { "FAIL" },
            o.error,
            o.tolerance
        );
    }
    Ok(ok)
}
