//! The limit experiment: `θ̂ = θ + Ω^{1/2}Z/√N` for a known covariance
//! `Ω`, tested with the same Wald statistic and Monte Carlo calibration as
//! real data. Produces empirical size (θ = 0) and power (sparse negative
//! shifts of equal ℓ2 norm) per (design, n, N, violation) cell.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{Direction, WaldMetric};
use crate::linalg::{psd_roots, DEFAULT_KKT_TOL, DEFAULT_OMEGA_JITTER};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Identity,
    Decay,
    Spike,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Identity, Design::Decay, Design::Spike];

    fn id(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Identity => "identity",
            Design::Decay => "decay",
            Design::Spike => "spike",
        })
    }
}

impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Design::Identity),
            "decay" => Ok(Design::Decay),
            "spike" => Ok(Design::Spike),
            _ => Err(Error::invalid(format!("unknown design '{s}' (identity|decay|spike)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    Null,
    Mild,
    Moderate,
    Strong,
}

impl Violation {
    pub const ALL: [Violation; 4] = [Violation::Null, Violation::Mild, Violation::Moderate, Violation::Strong];

    /// Fraction of coordinates shifted.
    pub fn support_fraction(self) -> f64 {
        match self {
            Violation::Null => 0.0,
            Violation::Mild => 0.05,
            Violation::Moderate => 0.10,
            Violation::Strong => 0.25,
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::Null => "null",
            Violation::Mild => "mild",
            Violation::Moderate => "moderate",
            Violation::Strong => "strong",
        })
    }
}

impl FromStr for Violation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(Violation::Null),
            "mild" => Ok(Violation::Mild),
            "moderate" => Ok(Violation::Moderate),
            "strong" => Ok(Violation::Strong),
            _ => Err(Error::invalid(format!("unknown violation '{s}' (null|mild|moderate|strong)"))),
        }
    }
}

/// How the test's covariance is obtained in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plugin {
    /// The true `Ω`.
    Exact,
    /// Sample covariance of `N` fresh draws of `Ω^{1/2}Z`.
    Sample,
}

impl fmt::Display for Plugin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plugin::Exact => "exact",
            Plugin::Sample => "sample",
        })
    }
}

impl FromStr for Plugin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Plugin::Exact),
            "sample" => Ok(Plugin::Sample),
            _ => Err(Error::invalid(format!("unknown plugin '{s}' (exact|sample)"))),
        }
    }
}

/// Spectrum parameters of the non-identity designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    /// `λ_j = j^(−decay_gamma)`.
    pub decay_gamma: f64,
    /// `None`: `max(2, ⌈0.1 n⌉)`, capped at `n`.
    pub spike_count: Option<usize>,
    pub spike_magnitude: f64,
    pub bulk_low: f64,
    pub bulk_high: f64,
}

impl Default for CovarianceParams {
    fn default() -> Self {
        CovarianceParams { decay_gamma: 1.0, spike_count: None, spike_magnitude: 10.0, bulk_low: 0.5, bulk_high: 1.5 }
    }
}

impl CovarianceParams {
    pub fn spikes(&self, n: usize) -> usize {
        self.spike_count.unwrap_or_else(|| (n as f64 * 0.1).ceil().max(2.0) as usize).min(n)
    }

    /// Eigenvalues of the design, largest first.
    pub fn spectrum(&self, design: Design, n: usize) -> Vec<f64> {
        match design {
            Design::Identity => vec![1.0; n],
            Design::Decay => (1..=n).map(|j| (j as f64).powf(-self.decay_gamma)).collect(),
            Design::Spike => {
                let k = self.spikes(n);
                let bulk = n - k;
                let mut v = vec![self.spike_magnitude; k];
                v.extend((0..bulk).map(|i| {
                    if bulk == 1 {
                        0.5 * (self.bulk_low + self.bulk_high)
                    } else {
                        self.bulk_high - (self.bulk_high - self.bulk_low) * i as f64 / (bulk - 1) as f64
                    }
                }));
                v
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.decay_gamma.is_finite() || self.decay_gamma < 0.0 {
            return Err(Error::invalid("decay_gamma must be a finite non-negative number"));
        }
        if !(self.spike_magnitude > 0.0) || !self.spike_magnitude.is_finite() {
            return Err(Error::invalid("spike_magnitude must be positive"));
        }
        if !(self.bulk_low > 0.0) || !(self.bulk_high >= self.bulk_low) || !self.bulk_high.is_finite() {
            return Err(Error::invalid("bulk range must satisfy 0 < bulk_low ≤ bulk_high"));
        }
        if self.spike_count == Some(0) {
            return Err(Error::invalid("spike_count must be at least 1"));
        }
        Ok(())
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Population covariance `Ω` for `design`.
pub fn make_covariance(design: Design, n: usize, params: &CovarianceParams, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("grid size n must be at least 1"));
    }
    params.validate()?;
    if design == Design::Identity {
        return Ok(DMatrix::identity(n, n));
    }
    let mut rng = rng::keyed(&[seed, design.id(), n as u64]);
    let u = random_orthogonal(n, &mut rng);
    let lam = DVector::from_vec(params.spectrum(design, n));
    let mut us = u.clone();
    for (j, &l) in lam.iter().enumerate() {
        us.column_mut(j).scale_mut(l);
    }
    Ok(crate::linalg::symmetrize(&(us * u.transpose())))
}

/// Signal-strength constants per violation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationConstants {
    pub c_mild: f64,
    pub c_moderate: f64,
    pub c_strong: f64,
}

/// Chosen so that at n = 10 the power curves over N ∈ [500, 2000] rise
/// from well below one instead of saturating; `c = 1` rejects every
/// replication already at N = 500.
impl Default for ViolationConstants {
    fn default() -> Self {
        ViolationConstants { c_mild: 0.05, c_moderate: 0.075, c_strong: 0.1 }
    }
}

impl ViolationConstants {
    pub fn get(&self, level: Violation) -> f64 {
        match level {
            Violation::Null => 0.0,
            Violation::Mild => self.c_mild,
            Violation::Moderate => self.c_moderate,
            Violation::Strong => self.c_strong,
        }
    }
}

/// Support size `k = max(1, round(frac·n))` for `level`.
pub fn support_size(level: Violation, n: usize) -> usize {
    if level == Violation::Null {
        return 0;
    }
    ((level.support_fraction() * n as f64).round() as usize).clamp(1, n)
}

/// Random support of size `k` and shift `δ = c·√(log n)/√k`, so the shift
/// vector has ℓ2 norm `c·√(log n)` at every level.
pub fn make_violation(level: Violation, n: usize, constants: &ViolationConstants, seed: u64) -> Result<(Vec<usize>, f64)> {
    if level == Violation::Null {
        return Ok((Vec::new(), 0.0));
    }
    if n < 2 {
        return Err(Error::invalid("violations need n ≥ 2 (log n must be positive)"));
    }
    let k = support_size(level, n);
    let strength = constants.get(level) * (n as f64).ln().sqrt();
    let delta = strength / (k as f64).sqrt();
    let mut rng = rng::keyed(&[seed, level.id(), n as u64]);
    let mut support = sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    Ok((support, delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_list: Vec<usize>,
    #[serde(rename = "N_list")]
    pub big_n_list: Vec<usize>,
    pub designs: Vec<Design>,
    pub violations: Vec<Violation>,
    pub reps: usize,
    pub level: f64,
    pub mc_reps: usize,
    pub seed: u64,
    pub constants: ViolationConstants,
    pub plugin: Plugin,
    pub covariance: CovarianceParams,
    pub omega_jitter: f64,
    pub kkt_tol: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_list: vec![10, 50, 100],
            big_n_list: vec![500, 1000, 1500, 2000],
            designs: Design::ALL.to_vec(),
            violations: Violation::ALL.to_vec(),
            reps: 500,
            level: 0.05,
            mc_reps: 2000,
            seed: 0,
            constants: ViolationConstants::default(),
            plugin: Plugin::Sample,
            covariance: CovarianceParams::default(),
            omega_jitter: DEFAULT_OMEGA_JITTER,
            kkt_tol: DEFAULT_KKT_TOL,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::invalid(format!("simulation.{name} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("n_list", self.n_list.len())?;
        nonempty("N_list", self.big_n_list.len())?;
        nonempty("designs", self.designs.len())?;
        nonempty("violations", self.violations.len())?;
        if self.n_list.contains(&0) || self.big_n_list.contains(&0) {
            return Err(Error::invalid("grid sizes and sample sizes must be at least 1"));
        }
        if self.reps == 0 {
            return Err(Error::invalid("simulation.reps must be at least 1"));
        }
        if self.mc_reps < 100 {
            return Err(Error::invalid("simulation.mc_reps must be at least 100"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("simulation.level must lie in (0, 1)"));
        }
        let c = &self.constants;
        if ![c.c_mild, c.c_moderate, c.c_strong].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("violation constants must be positive"));
        }
        if self.violations.iter().any(|&v| v != Violation::Null) && self.n_list.contains(&1) {
            return Err(Error::invalid("violations need n ≥ 2"));
        }
        self.covariance.validate()
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &design in &self.designs {
            for &n in &self.n_list {
                for &big_n in &self.big_n_list {
                    for &violation in &self.violations {
                        out.push(Cell { design, n, big_n, violation });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    design: Design,
    n: usize,
    big_n: usize,
    violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationRow {
    pub design: Design,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub violation: Violation,
    /// Completed replications (excludes failures).
    pub reps: usize,
    pub rejection_rate: f64,
    pub mc_stderr: f64,
    /// Replications whose plug-in covariance could not be used.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    pub rows: Vec<SimulationRow>,
}

impl SimulationResult {
    pub fn row(&self, design: Design, n: usize, big_n: usize, violation: Violation) -> Option<&SimulationRow> {
        self.rows
            .iter()
            .find(|r| r.design == design && r.n == n && r.big_n == big_n && r.violation == violation)
    }
}

struct CellSetup {
    sqrt: DMatrix<f64>,
    omega: DMatrix<f64>,
}

// Some(reject) or None on a degenerate plug-in.
fn replicate(cfg: &SimulationConfig, cell: &Cell, setup: &CellSetup, rep: usize) -> Result<Option<bool>> {
    let key = [cfg.seed, cell.design.id(), cell.n as u64, cell.big_n as u64, cell.violation.id(), rep as u64];
    let mut rng = rng::keyed(&key);
    let n = cell.n;
    let mut theta = DVector::zeros(n);
    if cell.violation != Violation::Null {
        let (support, delta) = make_violation(cell.violation, n, &cfg.constants, rng.random())?;
        for i in support {
            theta[i] = -delta;
        }
    }
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let theta_hat = theta + &setup.sqrt * z / (cell.big_n as f64).sqrt();

    let omega_hat = match cfg.plugin {
        Plugin::Exact => setup.omega.clone(),
        Plugin::Sample => {
            let draws = DMatrix::from_fn(cell.big_n, n, |_, _| rng.sample::<f64, _>(StandardNormal)) * &setup.sqrt;
            let centered = crate::assembly::center_columns(&draws);
            let denom = (cell.big_n.max(2) - 1) as f64;
            crate::linalg::symmetrize(&(centered.transpose() * &centered / denom))
        }
    };
    let metric = match WaldMetric::new(&omega_hat, cfg.omega_jitter, cfg.kkt_tol) {
        Ok(m) => m,
        Err(Error::DegenerateCovariance(_)) | Err(Error::NonFinite(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let wald = metric.statistic(&theta_hat, cell.big_n, Direction::Nonneg)?;
    if wald.w == 0.0 {
        // Every null draw is ≥ 0, so p = 1.
        return Ok(Some(false));
    }
    let mc_seed = rng::mix(&[rng::mix(&key), 0x6d63]);
    let p = metric.pvalue(wald.w, cfg.mc_reps, mc_seed)?.p_value;
    Ok(Some(p <= cfg.level))
}

/// Runs every configured cell. Replications are spread over the current
/// rayon pool; the result does not depend on the pool size.
pub fn run_experiment(cfg: &SimulationConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut setups = Vec::with_capacity(cells.len());
    for cell in &cells {
        let omega = make_covariance(cell.design, cell.n, &cfg.covariance, cfg.seed)?;
        let sqrt = psd_roots(&omega, 0.0)?.sqrt;
        setups.push(CellSetup { sqrt, omega });
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.reps).map(move |r| (c, r))).collect();
    let outcomes: Vec<Option<bool>> = jobs
        .par_iter()
        .map(|&(c, r)| replicate(cfg, &cells[c], &setups[c], r))
        .collect::<Result<_>>()?;

    let rows = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let chunk = &outcomes[c * cfg.reps..(c + 1) * cfg.reps];
            let done = chunk.iter().flatten().count();
            let rejected = chunk.iter().flatten().filter(|&&r| r).count();
            let rate = if done > 0 { rejected as f64 / done as f64 } else { f64::NAN };
            let stderr = if done > 0 { (rate * (1.0 - rate) / done as f64).sqrt() } else { f64::NAN };
            SimulationRow {
                design: cell.design,
                n: cell.n,
                big_n: cell.big_n,
                violation: cell.violation,
                reps: done,
                rejection_rate: rate,
                mc_stderr: stderr,
                failures: cfg.reps - done,
            }
        })
        .collect();
    Ok(SimulationResult { config: cfg.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;

    fn sorted_eigs(m: &DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = m.clone().symmetric_eigenvalues().iter().cloned().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        e
    }

    #[test]
    fn covariance_examples() {
        let p = CovarianceParams::default();
        assert_eq!(make_covariance(Design::Identity, 3, &p, 0).unwrap(), DMatrix::identity(3, 3));
        let decay = sorted_eigs(&make_covariance(Design::Decay, 3, &p, 1).unwrap());
        for (got, want) in decay.iter().zip([1.0, 0.5, 1.0 / 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let spike = sorted_eigs(&make_covariance(Design::Spike, 10, &p, 2).unwrap());
        assert!((spike[0] - 10.0).abs() < 1e-10 && (spike[1] - 10.0).abs() < 1e-10);
        let bulk: Vec<f64> = spike[2..].to_vec();
        for (i, v) in bulk.iter().enumerate() {
            let want = 1.5 - i as f64 / 7.0;
            assert!((v - want).abs() < 1e-10, "{v} vs {want}");
        }
        assert!(spike[9] > 0.0);
    }

    #[test]
    fn covariances_are_spd_up_to_200() {
        let p = CovarianceParams::default();
        for n in [1usize, 2, 7, 50, 200] {
            for d in Design::ALL {
                let m = make_covariance(d, n, &p, 5).unwrap();
                assert!(m.clone().cholesky().is_some(), "{d} n={n}");
                assert!(min_eigenvalue(&m) > 0.0);
            }
        }
    }

    #[test]
    fn violation_examples() {
        let c = ViolationConstants { c_mild: 1.0, c_moderate: 1.0, c_strong: 1.0 };
        assert_eq!(make_violation(Violation::Null, 10, &c, 0).unwrap(), (vec![], 0.0));
        let (support, delta) = make_violation(Violation::Mild, 100, &c, 0).unwrap();
        assert_eq!(support.len(), 5);
        assert!((delta - (100f64.ln()).sqrt() / 5f64.sqrt()).abs() < 1e-15);
        for level in [Violation::Mild, Violation::Moderate, Violation::Strong] {
            for n in [2usize, 10, 37, 100] {
                let (s, d) = make_violation(level, n, &c, 3).unwrap();
                let norm = (s.len() as f64).sqrt() * d;
                assert!((norm - (n as f64).ln().sqrt()).abs() <= 1e-12);
                let mut u = s.clone();
                u.dedup();
                assert_eq!(u.len(), s.len());
                assert!(s.iter().all(|&i| i < n));
            }
        }
        assert!(make_violation(Violation::Strong, 1, &c, 0).is_err());
    }

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            n_list: vec![4],
            big_n_list: vec![200],
            designs: vec![Design::Identity, Design::Spike],
            violations: vec![Violation::Null, Violation::Strong],
            reps: 40,
            mc_reps: 200,
            seed: 11,
            constants: ViolationConstants { c_mild: 1.0, c_moderate: 1.0, c_strong: 1.0 },
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn experiment_is_reproducible_across_pools() {
        let cfg = small_config();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
        let a = one.install(|| run_experiment(&cfg).unwrap());
        let b = many.install(|| run_experiment(&cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        for r in &a.rows {
            assert!((0.0..=1.0).contains(&r.rejection_rate));
            assert_eq!(r.reps + r.failures, 40);
            let se = (r.rejection_rate * (1.0 - r.rejection_rate) / r.reps as f64).sqrt();
            assert_eq!(r.mc_stderr, se);
        }
        let strong = a.row(Design::Identity, 4, 200, Violation::Strong).unwrap();
        assert!(strong.rejection_rate > 0.9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.reps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.level = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.n_list = vec![1];
        assert!(cfg.validate().is_err());
        cfg.violations = vec![Violation::Null];
        assert!(cfg.validate().is_ok());
        assert_eq!("spike".parse::<Design>().unwrap(), Design::Spike);
        assert!("banded".parse::<Design>().is_err());
    }

    proptest! {
        #[test]
        fn support_size_rule(n in 2usize..500) {
            for level in [Violation::Mild, Violation::Moderate, Violation::Strong] {
                let k = support_size(level, n);
                prop_assert!(k >= 1 && k <= n);
                prop_assert_eq!(k, ((level.support_fraction() * n as f64).round() as usize).max(1));
            }
        }
    }
}
