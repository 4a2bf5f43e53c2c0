//! Plain CSV reading and writing for the command line tools. The files are
//! simple enough (numeric columns, one header line) that this stays
//! dependency-free; floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::bench::{BenchRecord, BenchReport};
use crate::error::{CokrigError, Result};
use crate::validate::LooRow;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CokrigError {
    CokrigError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a CSV with header `x1,...,xd,y`: design points and observations of
/// one level. An empty body yields empty vectors; the caller decides whether
/// that is an error.
pub fn read_level_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (header, rows) = read_numeric_csv(path)?;
    let d = expect_x_columns(path, &header, true)?;
    let mut points = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.len() != d + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", d + 1, row.len()),
            ));
        }
        values.push(row[d]);
        points.push(row[..d].to_vec());
    }
    Ok((points, values))
}

/// Reads a CSV with header `x1,...,xd`: query points only. A trailing `y`
/// column is accepted and ignored, so a data file doubles as a query file
/// when predicting at points with known truth.
pub fn read_query_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_numeric_csv(path)?;
    if header.last().map(String::as_str) == Some("y") {
        return read_level_csv(path).map(|(points, _)| points);
    }
    let d = expect_x_columns(path, &header, false)?;
    let mut points = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.len() != d {
            return Err(parse_err(
                path,
                line,
                format!("expected {d} fields, found {}", row.len()),
            ));
        }
        points.push(row);
    }
    Ok(points)
}

/// Checks that the header is x1..xd, optionally followed by y, and returns d.
fn expect_x_columns(path: &Path, header: &[String], with_y: bool) -> Result<usize> {
    let d = if with_y {
        if header.last().map(String::as_str) != Some("y") {
            return Err(parse_err(path, 1, "the last column must be named y"));
        }
        header.len() - 1
    } else {
        header.len()
    };
    if d == 0 {
        return Err(parse_err(path, 1, "no input columns found"));
    }
    for (i, name) in header[..d].iter().enumerate() {
        let expected = format!("x{}", i + 1);
        if name != &expected {
            return Err(parse_err(
                path,
                1,
                format!("column {} is named {name:?}, expected {expected:?}", i + 1),
            ));
        }
    }
    Ok(d)
}

/// Header tokens plus (1-based line number, parsed fields) for each
/// non-empty data line.
#[allow(clippy::type_complexity)]
fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<f64>)>)> {
    let f = File::open(path).map_err(|e| CokrigError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(f);
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CokrigError::io(path.display().to_string(), e))?;
        let line = line.trim_end_matches(['\r', '\n']).trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => {
                header = Some(fields.iter().map(|s| s.to_lowercase()).collect());
            }
            Some(_) => {
                let mut parsed = Vec::with_capacity(fields.len());
                for field in &fields {
                    let v: f64 = field.parse().map_err(|_| {
                        parse_err(path, idx + 1, format!("not a number: {field:?}"))
                    })?;
                    if !v.is_finite() {
                        return Err(parse_err(path, idx + 1, format!("non-finite value {field:?}")));
                    }
                    parsed.push(v);
                }
                rows.push((idx + 1, parsed));
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(path, 1, "the file is empty"))?;
    Ok((header, rows))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| CokrigError::io(path.display().to_string(), e))?;
    Ok(BufWriter::new(f))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CokrigError::io(path.display().to_string(), e))
}

fn write_line(w: &mut BufWriter<File>, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| CokrigError::io(path.display().to_string(), e))
}

fn x_header(dim: usize) -> String {
    (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

fn x_fields(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes `x1..xd,y` rows (level data, as read by `read_level_csv`).
pub fn write_level_csv(path: &Path, points: &[Vec<f64>], values: &[f64]) -> Result<()> {
    let dim = points.first().map(|p| p.len()).unwrap_or(1);
    let mut w = create(path)?;
    write_line(&mut w, path, &format!("{},y", x_header(dim)))?;
    for (x, v) in points.iter().zip(values) {
        write_line(&mut w, path, &format!("{},{v}", x_fields(x)))?;
    }
    finish(w, path)
}

/// Writes `x1..xd,mean,std` prediction rows.
pub fn write_predictions_csv(
    path: &Path,
    points: &[Vec<f64>],
    means: &[f64],
    stds: &[f64],
) -> Result<()> {
    let dim = points.first().map(|p| p.len()).unwrap_or(1);
    let mut w = create(path)?;
    write_line(&mut w, path, &format!("{},mean,std", x_header(dim)))?;
    for i in 0..points.len() {
        write_line(
            &mut w,
            path,
            &format!("{},{},{}", x_fields(&points[i]), means[i], stds[i]),
        )?;
    }
    finish(w, path)
}

/// Writes `point_id,error,pred_std` cross validation rows.
pub fn write_cv_csv(path: &Path, rows: &[LooRow]) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, "point_id,error,pred_std")?;
    for r in rows {
        write_line(
            &mut w,
            path,
            &format!("{},{},{}", r.index, r.mean - r.truth, r.std),
        )?;
    }
    finish(w, path)
}

/// Writes `value,density` pairs of one predictive density grid.
pub fn write_density_csv(path: &Path, density: &[(f64, f64)]) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, "value,density")?;
    for (v, p) in density {
        write_line(&mut w, path, &format!("{v},{p}"))?;
    }
    finish(w, path)
}

/// Writes benchmark records, one per size, with a trailing comment line
/// holding the log-log slope when available.
pub fn write_bench_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, "n2,n1,t_crude_s,t_light_s,ratio")?;
    for BenchRecord {
        n2,
        n1,
        t_crude_s,
        t_light_s,
        ratio,
    } in &report.records
    {
        write_line(&mut w, path, &format!("{n2},{n1},{t_crude_s},{t_light_s},{ratio}"))?;
    }
    if let Some(slope) = report.slope {
        write_line(&mut w, path, &format!("# log-log slope of t_crude: {slope}"))?;
    }
    finish(w, path)
}
