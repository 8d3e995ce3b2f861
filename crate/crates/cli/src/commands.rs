//! The `fit`, `test` and `simulate` workflows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use shapekit::estimator::FitOptions;
use shapekit::{
    build_gram, enumerate, fit, run_experiment, run_test, ActiveSet, Dataset, FitResult, GramOptions, GramSystem,
    KernelModel, MultiIndex, MultiIndexSet, TestOptions, TestReport,
};

use crate::config::{ActiveSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, read_data, read_grid, write_csv, write_json, x_header, SCHEMA_VERSION};

/// Runs `f` on a rayon pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::input("--threads must be at least 1")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::input(format!("cannot start {t} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Data, kernel and fitted system shared by `fit` and `test`.
pub struct Fitted {
    pub set: MultiIndexSet,
    pub kernel: KernelModel,
    pub sys: GramSystem,
    pub fit: FitResult,
}

pub fn fit_from_files(cfg: &RunConfig, data_path: &Path) -> CliResult<Fitted> {
    let lambda = cfg.require_lambda()?;
    let table = read_data(data_path)?;
    let n = table.x.nrows();
    let set = enumerate(table.x.ncols(), cfg.s)?;
    let w = cfg.preset.weights(&set, n, table.y.as_ref(), &table.weights)?;
    let data = Dataset::new(table.x, table.y, w)?;
    let active = match &cfg.active {
        ActiveSpec::Auto => data.active_set(&set)?,
        ActiveSpec::List(list) => {
            let positions = list
                .iter()
                .map(|mi| {
                    set.position(mi).ok_or_else(|| {
                        CliError::input(format!("active multi-index {mi} is not in the set with d = {}, s = {}", set.d(), set.s()))
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            ActiveSet::new(&set, positions)?
        }
    };
    let kernel = KernelModel::new(cfg.kernel_family, cfg.lengthscale.clone())?;
    let sys = build_gram(&data, &kernel, &set, &active, &GramOptions::default())?;
    let opts = FitOptions { lambda, path: cfg.solver_path, rank_tol: cfg.rank_tol, max_rank: Some(cfg.max_rank) };
    let fit = fit(&sys, &opts)?;
    Ok(Fitted { set, kernel, sys, fit })
}

#[derive(Serialize)]
struct FitSummary<'a> {
    lambda: f64,
    path: String,
    rank_used: usize,
    objective: f64,
    residual: f64,
    truncated: bool,
    m: usize,
    gram_jitter: f64,
    active: &'a [MultiIndex],
    /// Multi-index-major: all samples for `active[0]`, then `active[1]`, ...
    c_hat: Vec<f64>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    schema_version: u32,
    command: &'static str,
    config: BTreeMap<String, String>,
    n_samples: usize,
    d: usize,
    fit: FitSummary<'a>,
}

pub fn cmd_fit(config: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let f = fit_from_files(&cfg, data)?;
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        config: cfg.resolved_map(),
        n_samples: f.sys.n(),
        d: f.set.d(),
        fit: FitSummary {
            lambda: f.fit.lambda,
            path: f.fit.path.to_string(),
            rank_used: f.fit.rank_used,
            objective: f.fit.objective,
            residual: f.fit.residual,
            truncated: f.fit.truncated,
            m: f.sys.m(),
            gram_jitter: f.sys.jitter,
            active: &f.sys.indices,
            c_hat: f.fit.c_hat.iter().cloned().collect(),
        },
    };
    write_json(out, &report)?;
    println!(
        "fit: N = {}, M = {}, path = {}, rank = {}, objective = {:.6e}{}",
        f.sys.n(),
        f.sys.m(),
        f.fit.path,
        f.fit.rank_used,
        f.fit.objective,
        if f.fit.truncated { " (factorization truncated at max_rank)" } else { "" }
    );
    Ok(())
}

#[derive(Serialize)]
struct TestJson<'a> {
    schema_version: u32,
    command: &'static str,
    config: BTreeMap<String, String>,
    lambda: f64,
    solver_path: String,
    report: &'a TestReport,
}

/// Path of the per-grid-point CSV written next to the JSON report.
pub fn grid_csv_path(out: &Path) -> PathBuf {
    out.with_extension("grid.csv")
}

pub fn cmd_test(config: &Path, data: &Path, grid: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> CliResult<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let points = read_grid(grid)?;
    let f = fit_from_files(&cfg, data)?;
    if points.ncols() != f.set.d() {
        return Err(CliError::input(format!(
            "{}: grid has {} coordinates, data has {}",
            grid.display(),
            points.ncols(),
            f.set.d()
        )));
    }
    let alpha = cfg.alpha_index.clone().unwrap_or_else(|| MultiIndex::zero(f.set.d()));
    if alpha.dim() != f.set.d() {
        return Err(CliError::input(format!("test.alpha_index {alpha} has the wrong dimension (d = {})", f.set.d())));
    }
    if alpha.order() > cfg.s {
        return Err(CliError::input(format!("test.alpha_index {alpha} has order above s = {}", cfg.s)));
    }
    let opts = TestOptions {
        alpha_test: alpha,
        direction: cfg.direction,
        mc_reps: cfg.mc_reps,
        seed: cfg.seed,
        levels: cfg.levels.clone(),
        omega_jitter: cfg.omega_jitter,
        kkt_tol: cfg.kkt_tol,
    };
    let report = with_threads(threads, || run_test(&f.sys, &f.kernel, &f.fit, &points, &opts))??;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(
        out,
        &TestJson {
            schema_version: SCHEMA_VERSION,
            command: "test",
            config: cfg.resolved_map(),
            lambda: f.fit.lambda,
            solver_path: f.fit.path.to_string(),
            report: &report,
        },
    )?;
    let header = {
        let mut h = vec!["j".to_string()];
        h.extend(x_header(f.set.d(), &["theta_hat", "c_star"]));
        h
    };
    let rows: Vec<Vec<String>> = report
        .grid
        .iter()
        .enumerate()
        .map(|(j, pt)| {
            let mut r = vec![j.to_string()];
            r.extend(pt.iter().map(|&v| fmt_f64(v)));
            r.push(fmt_f64(report.theta_hat[j]));
            r.push(fmt_f64(report.c_star[j]));
            r
        })
        .collect();
    write_csv(&grid_csv_path(out), &header, &rows)?;
    println!("W_N = {:.6e}, p = {:.6}, mc_reps = {}", report.w_n, report.p_value, report.mc_reps);
    for d in &report.decision_at {
        println!(
            "level {}: {} H0 ({} {} on the grid)",
            d.level,
            if d.reject { "reject" } else { "do not reject" },
            opts.alpha_test,
            match opts.direction {
                shapekit::Direction::Nonneg => "derivative >= 0",
                shapekit::Direction::Nonpos => "derivative <= 0",
            }
        );
    }
    Ok(())
}

pub const SIM_HEADER: [&str; 7] = ["design", "n", "N", "violation", "reps", "rejection_rate", "mc_stderr"];

#[derive(Serialize)]
struct CellMeta {
    design: String,
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    violation: String,
    failures: usize,
}

#[derive(Serialize)]
struct SimMeta {
    schema_version: u32,
    command: &'static str,
    config: BTreeMap<String, String>,
    /// Spike count used for each grid size.
    spike_counts: BTreeMap<usize, usize>,
    cells: Vec<CellMeta>,
}

/// Metadata sidecar written next to the simulation CSV.
pub fn sim_meta_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> CliResult<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    cfg.simulation.validate()?;
    let result = with_threads(threads, || run_experiment(&cfg.simulation))??;
    let header: Vec<String> = SIM_HEADER.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.design.to_string(),
                r.n.to_string(),
                r.big_n.to_string(),
                r.violation.to_string(),
                r.reps.to_string(),
                fmt_f64(r.rejection_rate),
                fmt_f64(r.mc_stderr),
            ]
        })
        .collect();
    write_csv(out, &header, &rows)?;
    let meta = SimMeta {
        schema_version: SCHEMA_VERSION,
        command: "simulate",
        config: cfg.resolved_map(),
        spike_counts: cfg.simulation.n_list.iter().map(|&n| (n, cfg.simulation.covariance.spikes(n))).collect(),
        cells: result
            .rows
            .iter()
            .map(|r| CellMeta {
                design: r.design.to_string(),
                n: r.n,
                big_n: r.big_n,
                violation: r.violation.to_string(),
                failures: r.failures,
            })
            .collect(),
    };
    write_json(&sim_meta_path(out), &meta)?;
    let failures: usize = result.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} replication(s) had a degenerate plug-in covariance; see the metadata file");
    }
    println!("simulate: {} cell(s) written to {}", result.rows.len(), out.display());
    Ok(())
}
