//! Kernels with exact mixed partial derivatives.
//!
//! Every Gram entry of the derivative basis is `D_x^a D_y^b K(x, y)`: the
//! inner product of `φ^(a)(x)` and `φ^(b)(y)`. The production kernel is the
//! Gaussian, whose partials factor over coordinates into probabilists'
//! Hermite polynomials in `r = (x − y) / ℓ`:
//!
//! ```text
//! ∂_x^a ∂_y^b exp(−r²/2) = (−1)^a ℓ^{−(a+b)} He_{a+b}(r) exp(−r²/2)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;

/// Largest one-sided derivative order any shipped kernel supports.
pub const S_MAX: usize = 2;

/// Relative PSD tolerance applied to assembled Gram matrices.
pub const TOL_PSD: f64 = 1e-8;

/// A reproducing kernel whose mixed partials can be evaluated exactly.
pub trait DerivativeKernel: Send + Sync {
    /// Largest supported one-sided order `|a|` (and `|b|`).
    fn s_max(&self) -> usize;

    /// Input dimension if the kernel is tied to one.
    fn dim(&self) -> Option<usize> {
        None
    }

    /// `D_x^a D_y^b K(x, y)` without argument validation.
    fn deriv(&self, a: &[u32], b: &[u32], x: &[f64], y: &[f64]) -> f64;

    /// Validated `D_x^a D_y^b K(x, y)`.
    fn eval_deriv(&self, a: &MultiIndex, b: &MultiIndex, x: &[f64], y: &[f64]) -> Result<f64> {
        check_args(self, a, b, x, y)?;
        let v = self.deriv(a.orders(), b.orders(), x, y);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("kernel derivative ({a}; {b}) at {x:?}, {y:?}")));
        }
        Ok(v)
    }
}

fn check_args<K: DerivativeKernel + ?Sized>(
    k: &K,
    a: &MultiIndex,
    b: &MultiIndex,
    x: &[f64],
    y: &[f64],
) -> Result<()> {
    let d = x.len();
    if y.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: y.len(), context: "kernel point y" });
    }
    if let Some(kd) = k.dim() {
        if kd != d {
            return Err(Error::DimensionMismatch { expected: kd, got: d, context: "kernel input" });
        }
    }
    for m in [a, b] {
        if m.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: m.dim(), context: "multi-index" });
        }
        if m.order() > k.s_max() {
            return Err(Error::UnsupportedOrder { order: m.order(), max: k.s_max() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            other => Err(Error::invalid(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// A Gaussian kernel `exp(−Σ_k (x_k − y_k)² / (2 ℓ_k²))`.
///
/// A single lengthscale is applied to every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    family: KernelFamily,
    lengthscale: Vec<f64>,
}

impl KernelModel {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, vec![lengthscale])
    }

    pub fn new(family: KernelFamily, lengthscale: Vec<f64>) -> Result<Self> {
        if lengthscale.is_empty() {
            return Err(Error::invalid("lengthscale must not be empty"));
        }
        if let Some(l) = lengthscale.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {l}")));
        }
        Ok(KernelModel { family, lengthscale })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscale(&self) -> &[f64] {
        &self.lengthscale
    }

    #[inline]
    fn ell(&self, k: usize) -> f64 {
        if self.lengthscale.len() == 1 {
            self.lengthscale[0]
        } else {
            self.lengthscale[k]
        }
    }
}

/// Probabilists' Hermite polynomial `He_n(r)`.
#[inline]
fn hermite(n: u32, r: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => r,
        _ => {
            let (mut prev, mut cur) = (1.0, r);
            for k in 1..n {
                let next = r * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

impl DerivativeKernel for KernelModel {
    fn s_max(&self) -> usize {
        S_MAX
    }

    fn dim(&self) -> Option<usize> {
        (self.lengthscale.len() > 1).then_some(self.lengthscale.len())
    }

    fn deriv(&self, a: &[u32], b: &[u32], x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let mut sq = 0.0;
                let mut factor = 1.0;
                for k in 0..x.len() {
                    let ell = self.ell(k);
                    let r = (x[k] - y[k]) / ell;
                    sq += r * r;
                    let n = a[k] + b[k];
                    if n > 0 {
                        let sign = if a[k] % 2 == 1 { -1.0 } else { 1.0 };
                        factor *= sign * hermite(n, r) / ell.powi(n as i32);
                    }
                }
                factor * (-0.5 * sq).exp()
            }
        }
    }
}

/// Outcome of comparing an analytic kernel partial with a finite difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Checks `D_x^a D_y^b K(x, y)` against a central finite difference.
///
/// The highest remaining order is peeled off one coordinate at a time: the
/// difference is taken of the analytic partial one order lower, in the
/// variable that was peeled. Applied over all orders, this validates each
/// level against the one below it, down to the kernel value itself.
/// `rel_err = |analytic − numeric| / max(1, |analytic|)`.
pub fn fd_check<K: DerivativeKernel + ?Sized>(
    k: &K,
    a: &MultiIndex,
    b: &MultiIndex,
    x: &[f64],
    y: &[f64],
    step: f64,
) -> Result<FdCheck> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic = k.eval_deriv(a, b, x, y)?;
    let numeric = if a.is_zero() && b.is_zero() {
        analytic
    } else {
        let mut lower_a = a.orders().to_vec();
        let mut lower_b = b.orders().to_vec();
        let (plus, minus) = if let Some(c) = lower_b.iter().rposition(|&o| o > 0) {
            lower_b[c] -= 1;
            let (mut yp, mut ym) = (y.to_vec(), y.to_vec());
            yp[c] += step;
            ym[c] -= step;
            (k.deriv(&lower_a, &lower_b, x, &yp), k.deriv(&lower_a, &lower_b, x, &ym))
        } else {
            let c = lower_a.iter().rposition(|&o| o > 0).expect("nonzero index");
            lower_a[c] -= 1;
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[c] += step;
            xm[c] -= step;
            (k.deriv(&lower_a, &lower_b, &xp, y), k.deriv(&lower_a, &lower_b, &xm, y))
        };
        (plus - minus) / (2.0 * step)
    };
    let rel_err = (analytic - numeric).abs() / analytic.abs().max(1.0);
    Ok(FdCheck { analytic, numeric, rel_err })
}
