use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn shapekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapekit")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FIVE_ROWS: &str = "x1,y\n-1.0,-0.8\n-0.5,-0.4\n0.0,0.1\n0.5,0.5\n1.0,0.9\n";

fn monotone_data(n: usize) -> String {
    let mut out = String::from("x1,y\n");
    for i in 0..n {
        let x = -1.5 + 3.0 * i as f64 / (n - 1) as f64;
        let wiggle = 0.05 * ((i * 7919) % 13) as f64 / 13.0;
        out.push_str(&format!("{x},{}\n", x.tanh() + wiggle));
    }
    out
}

#[test]
fn fit_minimal_level_preset() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", "s = 0\nlambda = 0.1\nweights.preset = level\n");
    let data = write(dir.path(), "data.csv", FIVE_ROWS);
    let out = dir.path().join("fit.json");
    let o = shapekit(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert!(v["fit"]["objective"].as_f64().unwrap().is_finite());
    assert_eq!(v["fit"]["c_hat"].as_array().unwrap().len(), 5);
    assert_eq!(v["config"]["lambda"], "0.1");
}

#[test]
fn custom_preset_missing_column_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", "s = 1\nlambda = 0.1\nweights.preset = custom\n");
    let data = write(dir.path(), "data.csv", "x1,w_0\n0.0,1.0\n1.0,2.0\n");
    let o = shapekit(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("w_1"));
}

#[test]
fn non_positive_lambda_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "data.csv", FIVE_ROWS);
    for l in ["0", "-1"] {
        let cfg = write(dir.path(), "run.cfg", &format!("s = 0\nlambda = {l}\nweights.preset = level\n"));
        let o = shapekit(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o.json"))]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("lambda must be positive"));
    }
}

#[test]
fn bad_cell_names_line_and_column() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", "s = 0\nlambda = 0.1\nweights.preset = level\n");
    let data = write(dir.path(), "data.csv", "x1,y\n0.0,1.0\n1.0,oops\n");
    let o = shapekit(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("'y'"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", "lambda = 0.1\nkernel.bandwidth = 2\n");
    let data = write(dir.path(), "data.csv", FIVE_ROWS);
    let o = shapekit(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn test_command_writes_report_and_grid_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "s = 1\nlambda = 0.05\nkernel.lengthscale = 0.7\nweights.preset = level\ntest.alpha_index = 1\ntest.mc_reps = 500\n",
    );
    let data = write(dir.path(), "data.csv", &monotone_data(40));
    let grid = write(dir.path(), "grid.csv", "x1\n-1.0\n-0.5\n0.0\n0.5\n1.0\n");
    let out = dir.path().join("report.json");
    let o = shapekit(&["test", "--config", s(&cfg), "--data", s(&data), "--grid", s(&grid), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("level ")).count(), 3);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let p = v["report"]["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    println!("nonneg p = {p}");
    let csv = fs::read_to_string(dir.path().join("report.grid.csv")).unwrap();
    assert!(csv.starts_with("# schema_version=1\nj,x1,theta_hat,c_star\n"));
    assert_eq!(csv.lines().count(), 2 + 5);
}

#[test]
fn single_point_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", "s = 1\nlambda = 0.05\nweights.preset = level\ntest.alpha_index = 1\ntest.mc_reps = 200\n");
    let data = write(dir.path(), "data.csv", &monotone_data(20));
    let grid = write(dir.path(), "grid.csv", "x1\n0.25\n");
    let out = dir.path().join("r.json");
    let o = shapekit(&["test", "--config", s(&cfg), "--data", s(&data), "--grid", s(&grid), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["report"]["theta_hat"].as_array().unwrap().len(), 1);
}

const ONE_CELL: &str = "\
simulation.n_list = 10
simulation.N_list = 500
simulation.designs = identity
simulation.violations = null
simulation.reps = 100
simulation.mc_reps = 500
simulation.seed = 4
";

#[test]
fn simulate_is_reproducible_and_embeds_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.cfg", ONE_CELL);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(shapekit(&["simulate", "--config", s(&cfg), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(shapekit(&["simulate", "--config", s(&cfg), "--out", s(&b)]).status.code(), Some(0));
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.contains("design,n,N,violation,reps,rejection_rate,mc_stderr\nidentity,10,500,null,100,"));

    // the embedded config reproduces the run
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.meta.json")).unwrap()).unwrap();
    let mut replay = String::new();
    for (k, v) in meta["config"].as_object().unwrap() {
        let v = v.as_str().unwrap();
        if !v.is_empty() {
            replay.push_str(&format!("{k} = {v}\n"));
        }
    }
    let cfg2 = write(dir.path(), "replay.cfg", &replay);
    let c = dir.path().join("c.csv");
    assert_eq!(shapekit(&["simulate", "--config", s(&cfg2), "--out", s(&c)]).status.code(), Some(0));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn simulate_zero_reps_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.cfg", &ONE_CELL.replace("reps = 100", "reps = 0"));
    let o = shapekit(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.cfg", ONE_CELL);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    shapekit(&["simulate", "--config", s(&cfg), "--out", s(&a), "--seed", "4"]);
    shapekit(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(dir.path().join("a.csv")).unwrap());
    let meta = fs::read_to_string(dir.path().join("b.meta.json")).unwrap();
    assert!(meta.contains("\"simulation.seed\": \"5\""));
}

#[test]
fn validate_passes_and_injection_fails() {
    let o = shapekit(&["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.contains("PASS")).count(), 7);
    let o = shapekit(&["validate", "--tolerance-scale", "1e-30"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn help_documents_exit_codes() {
    let o = shapekit(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for code in ["0  success", "1  validation", "2  input", "3  solver", "4  degenerate"] {
        assert!(text.contains(code), "{text}");
    }
}
