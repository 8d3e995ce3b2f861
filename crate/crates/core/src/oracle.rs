//! Reference computations used by the validation suites.
//!
//! [`PolyFeatureKernel`] is the degree-2 polynomial kernel `(1 + x·y)²`,
//! whose feature map is finite. Every quantity of the estimator and the
//! plug-in covariance can then be computed directly as coordinate vectors
//! in feature space, independently of the Gram-matrix pipeline.

use nalgebra::{DMatrix, DVector};

use crate::assembly::Dataset;
use crate::error::{Error, Result};
use crate::kernel::DerivativeKernel;
use crate::linalg::solve_spd;
use crate::multiindex::{MultiIndex, MultiIndexSet};

/// `(1 + x·y)²` on `ℝ^d` via its explicit features.
#[derive(Debug, Clone)]
pub struct PolyFeatureKernel {
    d: usize,
    /// `(coefficient, exponents)` of each monomial feature.
    features: Vec<(f64, Vec<u32>)>,
}

impl PolyFeatureKernel {
    pub fn new(d: usize) -> Self {
        let r2 = std::f64::consts::SQRT_2;
        let mut features = vec![(1.0, vec![0; d])];
        for i in 0..d {
            let mut e = vec![0; d];
            e[i] = 1;
            features.push((r2, e));
        }
        for i in 0..d {
            let mut e = vec![0; d];
            e[i] = 2;
            features.push((1.0, e));
        }
        for i in 0..d {
            for j in i + 1..d {
                let mut e = vec![0; d];
                e[i] = 1;
                e[j] = 1;
                features.push((r2, e));
            }
        }
        PolyFeatureKernel { d, features }
    }

    pub fn feature_dim(&self) -> usize {
        self.features.len()
    }

    /// `D^α φ(x)`.
    pub fn feature_deriv(&self, alpha: &[u32], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.features.len(),
            self.features.iter().map(|(c, e)| {
                let mut v = *c;
                for k in 0..self.d {
                    if alpha[k] > e[k] {
                        return 0.0;
                    }
                    for t in 0..alpha[k] {
                        v *= (e[k] - t) as f64;
                    }
                    v *= x[k].powi((e[k] - alpha[k]) as i32);
                }
                v
            }),
        )
    }
}

impl DerivativeKernel for PolyFeatureKernel {
    fn s_max(&self) -> usize {
        2
    }

    fn dim(&self) -> Option<usize> {
        Some(self.d)
    }

    fn deriv(&self, a: &[u32], b: &[u32], x: &[f64], y: &[f64]) -> f64 {
        self.feature_deriv(a, x).dot(&self.feature_deriv(b, y))
    }
}

/// Estimator and covariance computed coordinate-wise in feature space.
#[derive(Debug, Clone)]
pub struct FeatureSpaceFit {
    /// `ĥ = (Σ̂ + λI)⁻¹ μ̂`.
    pub h: DVector<f64>,
    pub theta: DVector<f64>,
    /// `(1/N) Σ_i ⟨F̂_i, û_k⟩⟨F̂_i, û_j⟩`.
    pub omega: DMatrix<f64>,
    /// Entry `(i, j)` is `⟨F̂_i, û_j⟩`.
    pub s: DMatrix<f64>,
}

/// Direct feature-space computation of `ĥ`, `θ̂` and `Ω̂_λ`.
pub fn feature_space_fit(
    kernel: &PolyFeatureKernel,
    data: &Dataset,
    set: &MultiIndexSet,
    lambda: f64,
    grid: &DMatrix<f64>,
    alpha: &MultiIndex,
) -> Result<FeatureSpaceFit> {
    if data.w.ncols() != set.m_s() {
        return Err(Error::DimensionMismatch { expected: set.m_s(), got: data.w.ncols(), context: "weight columns" });
    }
    let n = data.n();
    let p = kernel.feature_dim();
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().cloned().collect() };

    let mut psi = DMatrix::zeros(p, n);
    for i in 0..n {
        let xi = row(&data.x, i);
        let mut v = DVector::zeros(p);
        for (a, mi) in set.indices().iter().enumerate() {
            v += kernel.feature_deriv(mi.orders(), &xi) * data.w[(i, a)];
        }
        psi.set_column(i, &v);
    }
    let mu = psi.column_mean();
    let mut tilde = psi.clone();
    for mut c in tilde.column_iter_mut() {
        c -= &mu;
    }
    let sigma = &tilde * tilde.transpose() / n as f64;
    let reg = &sigma + DMatrix::identity(p, p) * lambda;
    let h = solve_spd(&reg, &DMatrix::from_column_slice(p, 1, mu.as_slice()))?.column(0).into_owned();

    let phi = DMatrix::from_columns(
        &(0..grid.nrows()).map(|j| kernel.feature_deriv(alpha.orders(), &row(grid, j))).collect::<Vec<_>>(),
    );
    let theta = phi.transpose() * &h;
    let u = solve_spd(&reg, &phi)?;

    let sh = &sigma * &h;
    let mut s = DMatrix::zeros(n, grid.nrows());
    for i in 0..n {
        let t = tilde.column(i);
        let f = t - t * t.dot(&h) + &sh;
        for j in 0..grid.nrows() {
            s[(i, j)] = f.dot(&u.column(j));
        }
    }
    let omega = s.transpose() * &s / n as f64;
    Ok(FeatureSpaceFit { h, theta, omega, s })
}

/// `min_{c ≥ 0} (θ − c)ᵀΩ⁻¹(θ − c)` by enumerating every face of the
/// orthant: on support `S` the minimizer solves `(Ω⁻¹)_SS c_S = (Ω⁻¹θ)_S`.
pub fn exhaustive_cone_distance(theta: &DVector<f64>, omega: &DMatrix<f64>) -> Result<f64> {
    let n = theta.len();
    if n > 16 {
        return Err(Error::invalid("exhaustive enumeration is limited to n ≤ 16"));
    }
    let p = omega.clone().try_inverse().ok_or_else(|| Error::Singular("Ω is not invertible".into()))?;
    let q = |c: &DVector<f64>| (theta - c).dot(&(&p * (theta - c)));
    let pt = &p * theta;
    let mut best = q(&DVector::zeros(n));
    for mask in 1u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let pss = DMatrix::from_fn(s.len(), s.len(), |r, c| p[(s[r], s[c])]);
        let rhs = DVector::from_fn(s.len(), |r, _| pt[s[r]]);
        let Some(cs) = pss.lu().solve(&rhs) else { continue };
        if cs.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut c = DVector::zeros(n);
        for (k, &i) in s.iter().enumerate() {
            c[i] = cs[k];
        }
        best = best.min(q(&c));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{build_grid, build_gram, GramOptions};
    use crate::estimator::fit_dense;
    use crate::inference::{omega_hat, theta_hat};
    use crate::multiindex::{enumerate, ActiveSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exhaustive_identity_case() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let d = exhaustive_cone_distance(&DVector::from_vec(vec![-1.0, 1.0]), &eye).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_matches_closed_form() {
        let k = PolyFeatureKernel::new(2);
        assert_eq!(k.feature_dim(), 6);
        let (x, y) = ([0.3, -1.2], [0.7, 0.4]);
        let dot = x[0] * y[0] + x[1] * y[1];
        assert!((k.deriv(&[0, 0], &[0, 0], &x, &y) - (1.0 + dot).powi(2)).abs() < 1e-14);
        // ∂_{x1} (1 + x·y)² = 2 y1 (1 + x·y)
        assert!((k.deriv(&[1, 0], &[0, 0], &x, &y) - 2.0 * y[0] * (1.0 + dot)).abs() < 1e-14);
        // ∂_{x1}∂_{y1} = 2(1 + x·y) + 2 x1 y1
        assert!((k.deriv(&[1, 0], &[1, 0], &x, &y) - (2.0 * (1.0 + dot) + 2.0 * x[0] * y[0])).abs() < 1e-14);
    }

    #[test]
    fn matrix_pipeline_matches_feature_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let kernel = PolyFeatureKernel::new(2);
        let set = enumerate(2, 1).unwrap();
        let n = 10;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(n, set.m_s(), |_, _| rng.random_range(-1.0..1.0));
        let data = Dataset::new(x, None, w).unwrap();
        let grid = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let alpha = MultiIndex::new(vec![1, 0]);
        let lambda = 0.3;

        let direct = feature_space_fit(&kernel, &data, &set, lambda, &grid, &alpha).unwrap();
        let sys = build_gram(&data, &kernel, &set, &ActiveSet::full(&set), &GramOptions::default()).unwrap();
        let fit = fit_dense(&sys, lambda).unwrap();
        let gs = build_grid(&sys, &kernel, Some(&fit), &grid, &alpha).unwrap();
        let theta = theta_hat(&fit, &gs).unwrap();
        let (omega, ws) = omega_hat(&gs, lambda).unwrap();
        assert!((theta - &direct.theta).amax() <= 1e-8);
        assert!((&ws.s_mat - &direct.s).amax() <= 1e-8, "{}", (&ws.s_mat - &direct.s).amax());
        assert!((omega - &direct.omega).amax() <= 1e-8);
    }
}
