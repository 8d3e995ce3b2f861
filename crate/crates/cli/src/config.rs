//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, lists are comma-separated.
//! Unknown or repeated keys are rejected. [`RunConfig::resolved`] lists
//! every key with its effective value, and parsing that listing back gives
//! the same configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use shapekit::estimator::SolverPath;
use shapekit::linalg::{DEFAULT_KKT_TOL, DEFAULT_OMEGA_JITTER, DEFAULT_RANK_TOL};
use shapekit::simulation::{CovarianceParams, ViolationConstants};
use shapekit::{Design, Direction, KernelFamily, MultiIndex, Plugin, SimulationConfig, Violation};

use crate::error::{CliError, CliResult};
use crate::preset::WeightPreset;

pub const KEYS: &[&str] = &[
    "kernel.family",
    "kernel.lengthscale",
    "lambda",
    "s",
    "active",
    "weights.preset",
    "solver.path",
    "rank_tol",
    "max_rank",
    "nnls.kkt_tol",
    "omega.jitter",
    "test.alpha_index",
    "test.direction",
    "test.mc_reps",
    "test.seed",
    "test.levels",
    "simulation.n_list",
    "simulation.N_list",
    "simulation.designs",
    "simulation.violations",
    "simulation.reps",
    "simulation.level",
    "simulation.mc_reps",
    "simulation.seed",
    "simulation.c_mild",
    "simulation.c_moderate",
    "simulation.c_strong",
    "simulation.plugin",
    "simulation.decay_gamma",
    "simulation.spike_count",
    "simulation.spike_magnitude",
    "simulation.bulk_low",
    "simulation.bulk_high",
];

/// Which multi-indices enter the representer span.
#[derive(Debug, Clone, PartialEq)]
pub enum ActiveSpec {
    /// Every index whose weight column is not identically zero.
    Auto,
    List(Vec<MultiIndex>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel_family: KernelFamily,
    pub lengthscale: Vec<f64>,
    pub lambda: Option<f64>,
    pub s: usize,
    pub active: ActiveSpec,
    pub preset: WeightPreset,
    pub solver_path: SolverPath,
    pub rank_tol: f64,
    pub max_rank: usize,
    pub kkt_tol: f64,
    pub omega_jitter: f64,
    /// `None`: the zero index of the data's dimension.
    pub alpha_index: Option<MultiIndex>,
    pub direction: Direction,
    pub mc_reps: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel_family: KernelFamily::Gaussian,
            lengthscale: vec![1.0],
            lambda: None,
            s: 1,
            active: ActiveSpec::Auto,
            preset: WeightPreset::Custom,
            solver_path: SolverPath::Auto,
            rank_tol: DEFAULT_RANK_TOL,
            max_rank: 2000,
            kkt_tol: DEFAULT_KKT_TOL,
            omega_jitter: DEFAULT_OMEGA_JITTER,
            alpha_index: None,
            direction: Direction::Nonneg,
            mc_reps: 10_000,
            seed: 0,
            levels: vec![0.01, 0.05, 0.10],
            simulation: SimulationConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, why: impl Display) -> CliError {
    CliError::input(format!("config key '{key}': cannot use '{value}': {why}"))
}

fn one<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: Display,
{
    v.trim().parse::<T>().map_err(|e| bad(key, v, e))
}

fn list<T: FromStr>(key: &str, v: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|p| one(key, p)).collect()
}

fn positive(key: &str, v: &str) -> CliResult<f64> {
    let x: f64 = one(key, v)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(bad(key, v, "must be positive"));
    }
    Ok(x)
}

fn non_negative(key: &str, v: &str) -> CliResult<f64> {
    let x: f64 = one(key, v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(bad(key, v, "must be non-negative"));
    }
    Ok(x)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("config line {}: expected 'key = value'", lineno + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::input(format!("config line {}: unknown key '{key}'", lineno + 1)));
            }
            if seen.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::input(format!("config line {}: key '{key}' given twice", lineno + 1)));
            }
        }
        let mut cfg = RunConfig::default();
        for (key, value) in &seen {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "kernel.family" => self.kernel_family = one(key, v)?,
            "kernel.lengthscale" => {
                self.lengthscale = v.split(',').map(|p| positive(key, p)).collect::<CliResult<_>>()?;
            }
            "lambda" => {
                let x: f64 = one(key, v)?;
                if !(x > 0.0 && x.is_finite()) {
                    return Err(CliError::input("lambda must be positive"));
                }
                self.lambda = Some(x);
            }
            "s" => self.s = one(key, v)?,
            "active" => {
                self.active = if v.trim() == "auto" { ActiveSpec::Auto } else { ActiveSpec::List(list(key, v)?) };
            }
            "weights.preset" => self.preset = one(key, v)?,
            "solver.path" => self.solver_path = one(key, v)?,
            "rank_tol" => self.rank_tol = non_negative(key, v)?,
            "max_rank" => {
                self.max_rank = one(key, v)?;
                if self.max_rank == 0 {
                    return Err(bad(key, v, "must be at least 1"));
                }
            }
            "nnls.kkt_tol" => self.kkt_tol = positive(key, v)?,
            "omega.jitter" => self.omega_jitter = non_negative(key, v)?,
            "test.alpha_index" => self.alpha_index = Some(one(key, v)?),
            "test.direction" => self.direction = one(key, v)?,
            "test.mc_reps" => {
                self.mc_reps = one(key, v)?;
                if self.mc_reps < 100 {
                    return Err(bad(key, v, "must be at least 100"));
                }
            }
            "test.seed" => self.seed = one(key, v)?,
            "test.levels" => {
                self.levels = list(key, v)?;
                if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                    return Err(bad(key, v, "levels must lie in (0, 1)"));
                }
            }
            "simulation.n_list" => self.simulation.n_list = list(key, v)?,
            "simulation.N_list" => self.simulation.big_n_list = list(key, v)?,
            "simulation.designs" => self.simulation.designs = list::<Design>(key, v)?,
            "simulation.violations" => self.simulation.violations = list::<Violation>(key, v)?,
            "simulation.reps" => self.simulation.reps = one(key, v)?,
            "simulation.level" => self.simulation.level = one(key, v)?,
            "simulation.mc_reps" => self.simulation.mc_reps = one(key, v)?,
            "simulation.seed" => self.simulation.seed = one(key, v)?,
            "simulation.c_mild" => self.simulation.constants.c_mild = positive(key, v)?,
            "simulation.c_moderate" => self.simulation.constants.c_moderate = positive(key, v)?,
            "simulation.c_strong" => self.simulation.constants.c_strong = positive(key, v)?,
            "simulation.plugin" => self.simulation.plugin = one::<Plugin>(key, v)?,
            "simulation.decay_gamma" => self.simulation.covariance.decay_gamma = non_negative(key, v)?,
            "simulation.spike_count" => {
                self.simulation.covariance.spike_count = if v.trim() == "auto" { None } else { Some(one(key, v)?) };
            }
            "simulation.spike_magnitude" => self.simulation.covariance.spike_magnitude = positive(key, v)?,
            "simulation.bulk_low" => self.simulation.covariance.bulk_low = positive(key, v)?,
            "simulation.bulk_high" => self.simulation.covariance.bulk_high = positive(key, v)?,
            _ => unreachable!("key list checked by parse"),
        }
        Ok(())
    }

    /// Every key with its effective value, in [`KEYS`] order.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let sim = &self.simulation;
        let ViolationConstants { c_mild, c_moderate, c_strong } = sim.constants;
        let CovarianceParams { decay_gamma, spike_count, spike_magnitude, bulk_low, bulk_high } = sim.covariance;
        let family = match self.kernel_family {
            KernelFamily::Gaussian => "gaussian",
        };
        let values: Vec<String> = vec![
            family.to_string(),
            join(&self.lengthscale),
            self.lambda.map(|l| l.to_string()).unwrap_or_default(),
            self.s.to_string(),
            match &self.active {
                ActiveSpec::Auto => "auto".to_string(),
                ActiveSpec::List(l) => join(l),
            },
            self.preset.to_string(),
            self.solver_path.to_string(),
            self.rank_tol.to_string(),
            self.max_rank.to_string(),
            self.kkt_tol.to_string(),
            self.omega_jitter.to_string(),
            self.alpha_index.as_ref().map(|a| a.to_string()).unwrap_or_default(),
            self.direction.to_string(),
            self.mc_reps.to_string(),
            self.seed.to_string(),
            join(&self.levels),
            join(&sim.n_list),
            join(&sim.big_n_list),
            join(&sim.designs),
            join(&sim.violations),
            sim.reps.to_string(),
            sim.level.to_string(),
            sim.mc_reps.to_string(),
            sim.seed.to_string(),
            c_mild.to_string(),
            c_moderate.to_string(),
            c_strong.to_string(),
            sim.plugin.to_string(),
            decay_gamma.to_string(),
            spike_count.map(|c| c.to_string()).unwrap_or_else(|| "auto".into()),
            spike_magnitude.to_string(),
            bulk_low.to_string(),
            bulk_high.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// `key = value` text of [`Self::resolved`]; unset optional keys are omitted.
    pub fn render(&self) -> String {
        self.resolved()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn resolved_map(&self) -> BTreeMap<String, String> {
        self.resolved().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn require_lambda(&self) -> CliResult<f64> {
        self.lambda.ok_or_else(|| CliError::input("config key 'lambda' is required"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("lambda = 0.5\n# comment\ns = 2  # trailing\ntest.levels = 0.05\n").unwrap();
        assert_eq!(cfg.lambda, Some(0.5));
        assert_eq!(cfg.s, 2);
        assert_eq!(cfg.levels, vec![0.05]);
        assert_eq!(cfg.mc_reps, 10_000);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_repeated_and_invalid() {
        assert!(RunConfig::parse("lamda = 1").unwrap_err().message.contains("unknown key"));
        assert!(RunConfig::parse("s = 1\ns = 2").unwrap_err().message.contains("twice"));
        assert!(RunConfig::parse("lambda = 0").unwrap_err().message.contains("lambda must be positive"));
        assert!(RunConfig::parse("lambda = -3").is_err());
        assert!(RunConfig::parse("garbage").is_err());
        assert!(RunConfig::parse("simulation.designs = identity,banded").is_err());
        assert!(RunConfig::parse("test.mc_reps = 5").is_err());
    }

    #[test]
    fn render_round_trips() {
        let text = "lambda = 0.125\nkernel.lengthscale = 0.5,2\nactive = 0.0,1.0\ntest.alpha_index = 1.0\n\
                    simulation.designs = spike\nsimulation.spike_count = 3\nsimulation.N_list = 500,2000\n";
        let cfg = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.render(), cfg.render());
        assert_eq!(cfg.resolved().len(), KEYS.len());
    }
}
