//! CSV and JSON files.
//!
//! Data CSV: `x1..xd`, optional `y`, weight columns `w_<multi-index>` such
//! as `w_0.1`. Grid CSV: `x1..xd`. Lines starting with `#` are comments.
//! Every emitted file carries a schema version; floats are written with 17
//! significant digits so a read-back is exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use shapekit::MultiIndex;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Columns of a data file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub weights: BTreeMap<MultiIndex, DVector<f64>>,
}

enum Column {
    X(usize),
    Y,
    W(MultiIndex),
}

fn classify(name: &str) -> Option<Column> {
    if name == "y" {
        return Some(Column::Y);
    }
    if let Some(rest) = name.strip_prefix("w_") {
        return rest.parse().ok().map(Column::W);
    }
    let k: usize = name.strip_prefix('x')?.parse().ok()?;
    (k >= 1).then_some(Column::X(k - 1))
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))
}

fn read_columns(path: &Path, allow_extra: bool) -> CliResult<Table> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr.headers().map_err(|e| CliError::io(path, e))?.iter().map(str::to_string).collect();
    let mut kinds = Vec::with_capacity(headers.len());
    let mut d = 0;
    for h in &headers {
        let kind = classify(h).ok_or_else(|| CliError::input(format!("{}: unknown column '{h}'", path.display())))?;
        match &kind {
            Column::X(k) => d = d.max(k + 1),
            _ if !allow_extra => {
                return Err(CliError::input(format!("{}: grid files hold only x1..xd, found '{h}'", path.display())));
            }
            _ => {}
        }
        kinds.push(kind);
    }
    for k in 0..d {
        let count = kinds.iter().filter(|c| matches!(c, Column::X(j) if *j == k)).count();
        if count != 1 {
            return Err(CliError::input(format!("{}: column x{} must appear exactly once", path.display(), k + 1)));
        }
    }
    if d == 0 {
        return Err(CliError::input(format!("{}: no covariate columns x1..xd", path.display())));
    }

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != headers.len() {
            return Err(CliError::input(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                headers.len(),
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::input(format!("{}: line {line}, column '{}': cannot parse '{field}'", path.display(), headers[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{}: line {line}, column '{}': value must be finite",
                    path.display(),
                    headers[c]
                )));
            }
            cols[c].push(v);
        }
    }
    let n = cols.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let mut x = DMatrix::zeros(n, d);
    let mut y = None;
    let mut weights = BTreeMap::new();
    for (kind, col) in kinds.into_iter().zip(cols) {
        match kind {
            Column::X(k) => x.set_column(k, &DVector::from_vec(col)),
            Column::Y => y = Some(DVector::from_vec(col)),
            Column::W(mi) => {
                if weights.insert(mi.clone(), DVector::from_vec(col)).is_some() {
                    return Err(CliError::input(format!("{}: column w_{mi} appears twice", path.display())));
                }
            }
        }
    }
    Ok(Table { x, y, weights })
}

pub fn read_data(path: &Path) -> CliResult<Table> {
    read_columns(path, true)
}

pub fn read_grid(path: &Path) -> CliResult<DMatrix<f64>> {
    read_columns(path, false).map(|t| t.x)
}

/// 17 significant digits: exact round trip through `str::parse`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut buf = format!("# schema_version={SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| CliError::io(path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::io(path, e))?;
    f.write_all(b"\n").map_err(|e| CliError::io(path, e))
}

/// `x1..xd` header plus extra column names.
pub fn x_header(d: usize, extra: &[&str]) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).chain(extra.iter().map(|s| s.to_string())).collect()
}
