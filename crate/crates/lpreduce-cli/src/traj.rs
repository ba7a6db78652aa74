//! Trajectory CSV files: one row per saved step, shared schema across all
//! systems so any two runs of the same system are directly comparable.
//!
//! Columns: `t`, slice configuration `q0..`, multiplet `f0..`, horizontal
//! velocities `wq0..` / `wv0..`, vertical momentum `p0..`, `energy`. Floats
//! render in shortest round-trip form, so files are byte-deterministic.

use std::path::Path;

use nalgebra::DVector;

use crate::Failure;

/// Build the header for the given sector widths.
pub fn header(n_q: usize, n_v: usize, n_g: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(2 + n_q * 2 + n_v * 2 + n_g);
    cols.push("t".to_string());
    for i in 0..n_q {
        cols.push(format!("q{i}"));
    }
    for i in 0..n_v {
        cols.push(format!("f{i}"));
    }
    for i in 0..n_q {
        cols.push(format!("wq{i}"));
    }
    for i in 0..n_v {
        cols.push(format!("wv{i}"));
    }
    for i in 0..n_g {
        cols.push(format!("p{i}"));
    }
    cols.push("energy".to_string());
    cols
}

/// Flatten one state into a row matching [`header`].
pub fn row(
    t: f64,
    q: &DVector<f64>,
    f: &DVector<f64>,
    wq: &DVector<f64>,
    wv: &DVector<f64>,
    p: &DVector<f64>,
    energy: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 + q.len() + f.len() + wq.len() + wv.len() + p.len());
    out.push(t);
    out.extend(q.iter().copied());
    out.extend(f.iter().copied());
    out.extend(wq.iter().copied());
    out.extend(wv.iter().copied());
    out.extend(p.iter().copied());
    out.push(energy);
    out
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| {
        Failure::Numeric(format!("cannot write trajectory `{}`: {e}", path.display()))
    })?;
    let io_err =
        |e: csv::Error| Failure::Numeric(format!("write failure on `{}`: {e}", path.display()));
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        let rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Failure::Numeric(format!("flush failure on `{}`: {e}", path.display())))?;
    Ok(())
}

/// A parsed trajectory file.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_csv(path: &Path) -> Result<Trajectory, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| {
        Failure::Usage(format!("cannot read trajectory `{}`: {e}", path.display()))
    })?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Failure::Usage(format!("bad header in `{}`: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| {
            Failure::Usage(format!("bad record in `{}`: {e}", path.display()))
        })?;
        let mut row = Vec::with_capacity(rec.len());
        for cell in rec.iter() {
            row.push(cell.trim().parse::<f64>().map_err(|_| {
                Failure::Usage(format!(
                    "non-numeric cell `{cell}` at data line {} of `{}`",
                    line + 1,
                    path.display()
                ))
            })?);
        }
        if row.len() != header.len() {
            return Err(Failure::Usage(format!(
                "ragged row at data line {} of `{}`",
                line + 1,
                path.display()
            )));
        }
        rows.push(row);
    }
    Ok(Trajectory { header, rows })
}

/// Strip the trailing index from a column name, grouping `q12` with `q`.
pub fn column_group(name: &str) -> &str {
    name.trim_end_matches(|c: char| c.is_ascii_digit())
}
