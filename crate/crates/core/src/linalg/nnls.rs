//! Lawson–Hanson active-set solver for `min_{c ≥ 0} ‖D c − b‖²`.
//!
//! The solver works on the normal equations `G = DᵀD`, `q = Dᵀb`, so one
//! [`NnlsSolver`] can be reused for many right-hand sides with the same
//! design, as the Monte Carlo calibration does.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_KKT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub c_star: DVector<f64>,
    /// `D c* − b`.
    pub residual: DVector<f64>,
    pub sq_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NnlsSolver {
    d: DMatrix<f64>,
    gram: Vec<f64>,
    n: usize,
    kkt_tol: f64,
}

impl NnlsSolver {
    pub fn new(d: &DMatrix<f64>) -> Result<Self> {
        Self::with_tol(d, DEFAULT_KKT_TOL)
    }

    pub fn with_tol(d: &DMatrix<f64>, kkt_tol: f64) -> Result<Self> {
        let n = d.ncols();
        if n == 0 || d.nrows() == 0 {
            return Err(Error::invalid("NNLS design matrix must be non-empty"));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("NNLS design matrix".into()));
        }
        let g = d.transpose() * d;
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = g[(i, j)];
            }
        }
        Ok(NnlsSolver { d: d.clone(), gram, n, kkt_tol })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<NnlsSolution> {
        if b.len() != self.d.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.d.nrows(),
                got: b.len(),
                context: "NNLS right-hand side",
            });
        }
        let q: Vec<f64> = (self.d.transpose() * b).iter().cloned().collect();
        let (c, iterations) = self.solve_normal(&q)?;
        let c_star = DVector::from_vec(c);
        let residual = &self.d * &c_star - b;
        let sq_norm = residual.norm_squared();
        Ok(NnlsSolution { c_star, residual, sq_norm, iterations })
    }

    /// Active-set iterations on `min ½cᵀGc − qᵀc, c ≥ 0`.
    fn solve_normal(&self, q: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = self.n;
        let g = &self.gram;
        let tol = self.kkt_tol * (1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let cap = 10 * n;

        let mut x = vec![0.0; n];
        let mut passive = vec![false; n];
        let mut w = q.to_vec();
        let mut s = vec![0.0; n];
        let mut scratch = Scratch::new(n);
        let mut iterations = 0;

        loop {
            let entering = (0..n)
                .filter(|&i| !passive[i])
                .max_by(|&a, &b| w[a].total_cmp(&w[b]))
                .filter(|&j| w[j] > tol);
            let Some(j) = entering else { break };
            iterations += 1;
            if iterations > cap {
                return Err(Error::NnlsIterationCap(cap));
            }
            passive[j] = true;

            let mut first = true;
            let mut stalled = false;
            loop {
                if !scratch.solve_passive(g, q, &passive, &mut s) {
                    return Err(Error::Singular("passive-set normal equations".into()));
                }
                if first && s[j] <= 0.0 {
                    // The entering variable cannot move off zero: roundoff at the optimum.
                    passive[j] = false;
                    s.copy_from_slice(&x);
                    stalled = true;
                    break;
                }
                first = false;
                if (0..n).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                    break;
                }
                let mut alpha = f64::INFINITY;
                let mut blocking = usize::MAX;
                for i in (0..n).filter(|&i| passive[i] && s[i] <= 0.0) {
                    let a = x[i] / (x[i] - s[i]);
                    if a < alpha {
                        alpha = a;
                        blocking = i;
                    }
                }
                for i in 0..n {
                    if passive[i] {
                        x[i] += alpha * (s[i] - x[i]);
                    }
                }
                x[blocking] = 0.0;
                for i in 0..n {
                    if passive[i] && x[i] <= 0.0 {
                        x[i] = 0.0;
                        passive[i] = false;
                    }
                }
            }
            x.copy_from_slice(&s);
            for i in 0..n {
                if !passive[i] {
                    x[i] = 0.0;
                }
            }
            for i in 0..n {
                let gx: f64 = (0..n).map(|k| g[i * n + k] * x[k]).sum();
                w[i] = q[i] - gx;
            }
            if stalled {
                break;
            }
        }
        Ok((x, iterations))
    }
}

/// Dense Cholesky workspace for the passive-set subsystem.
struct Scratch {
    idx: Vec<usize>,
    a: Vec<f64>,
    y: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch { idx: Vec::with_capacity(n), a: vec![0.0; n * n], y: vec![0.0; n] }
    }

    // Writes the solution of G_PP s_P = q_P into `s` (zeros off P).
    fn solve_passive(&mut self, g: &[f64], q: &[f64], passive: &[bool], s: &mut [f64]) -> bool {
        let n = passive.len();
        self.idx.clear();
        self.idx.extend((0..n).filter(|&i| passive[i]));
        let k = self.idx.len();
        let a = &mut self.a;
        for (r, &ir) in self.idx.iter().enumerate() {
            for (c, &ic) in self.idx.iter().enumerate() {
                a[r * k + c] = g[ir * n + ic];
            }
        }
        for c in 0..k {
            let mut d = a[c * k + c];
            for p in 0..c {
                d -= a[c * k + p] * a[c * k + p];
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            a[c * k + c] = d;
            for r in c + 1..k {
                let mut v = a[r * k + c];
                for p in 0..c {
                    v -= a[r * k + p] * a[c * k + p];
                }
                a[r * k + c] = v / d;
            }
        }
        let y = &mut self.y;
        for r in 0..k {
            let mut v = q[self.idx[r]];
            for p in 0..r {
                v -= a[r * k + p] * y[p];
            }
            y[r] = v / a[r * k + r];
        }
        for r in (0..k).rev() {
            let mut v = y[r];
            for p in r + 1..k {
                v -= a[p * k + r] * y[p];
            }
            y[r] = v / a[r * k + r];
        }
        s.iter_mut().for_each(|v| *v = 0.0);
        for (r, &i) in self.idx.iter().enumerate() {
            s[i] = y[r];
        }
        true
    }
}

/// `argmin_{c ≥ 0} ‖D c − b‖²`.
pub fn nnls(d: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    NnlsSolver::new(d)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Every optimum is the unconstrained least-squares solution on its support.
    fn brute_force(d: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = d.ncols();
        let mut best = (DVector::zeros(n), b.norm_squared());
        for mask in 1u32..(1 << n) {
            let cols: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let sub = DMatrix::from_fn(d.nrows(), cols.len(), |r, c| d[(r, cols[c])]);
            let Some(sol) = sub.clone().svd(true, true).solve(b, 1e-14).ok() else { continue };
            if sol.iter().any(|&v| v < 0.0) {
                continue;
            }
            let mut c = DVector::zeros(n);
            for (k, &i) in cols.iter().enumerate() {
                c[i] = sol[k];
            }
            let obj = (d * &c - b).norm_squared();
            if obj < best.1 {
                best = (c, obj);
            }
        }
        best
    }

    #[test]
    fn identity_interior() {
        let d = DMatrix::<f64>::identity(2, 2);
        let sol = nnls(&d, &DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_eq!(sol.c_star.as_slice(), &[2.0, 3.0]);
        assert_eq!(sol.sq_norm, 0.0);
    }

    #[test]
    fn identity_clips_negatives() {
        let d = DMatrix::<f64>::identity(2, 2);
        let sol = nnls(&d, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(sol.c_star.as_slice(), &[1.0, 0.0]);
        assert_eq!(sol.sq_norm, 1.0);
    }

    #[test]
    fn matches_exhaustive_active_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let d = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let sol = nnls(&d, &b).unwrap();
            let (c_ref, obj_ref) = brute_force(&d, &b);
            assert!((sol.sq_norm - obj_ref).abs() <= 1e-9, "{} vs {}", sol.sq_norm, obj_ref);
            assert!((&sol.c_star - c_ref).amax() <= 1e-6);
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let n = rng.random_range(1..8);
            let d = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
                + DMatrix::identity(n, n) * 0.5;
            let b = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let sol = nnls(&d, &b).unwrap();
            let grad = d.transpose() * &sol.residual;
            for i in 0..n {
                assert!(sol.c_star[i] >= 0.0);
                if sol.c_star[i] > 0.0 {
                    assert!(grad[i].abs() <= 1e-8, "{}", grad[i]);
                } else {
                    assert!(grad[i] >= -1e-8, "{}", grad[i]);
                }
            }
            // Dominance over the trivial feasible points.
            assert!(sol.sq_norm <= b.norm_squared() + 1e-12);
            let clipped = b.map(|v| v.max(0.0));
            let alt = (&d * clipped - &b).norm_squared();
            assert!(sol.sq_norm <= alt + 1e-12);
        }
    }

    #[test]
    fn reusable_across_right_hand_sides() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 1.0]);
        let solver = NnlsSolver::new(&d).unwrap();
        for b in [[1.0, 1.0], [-1.0, 2.0], [-1.0, -1.0]] {
            let b = DVector::from_row_slice(&b);
            assert_eq!(solver.solve(&b).unwrap(), nnls(&d, &b).unwrap());
        }
        assert!(solver.solve(&DVector::zeros(3)).is_err());
    }
}
