//! CSV reading and writing for power series and per-device tables.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        context: format!("{} (line {line})", path.display()),
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads the `watts` column of a `t,watts` or `timestamp,watts` file.
pub fn read_series(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let (header, columns) = read_table(path)?;
    if header.len() != 2 || !matches!(header[0].as_str(), "t" | "timestamp") || header[1] != "watts" {
        return Err(parse_err(
            path,
            1,
            format!("expected header `t,watts` or `timestamp,watts`, found `{}`", header.join(",")),
        ));
    }
    Ok(columns.into_iter().nth(1).unwrap_or_default())
}

/// Reads a numeric table; returns the header and one vector per column.
/// The first column may hold non-numeric timestamps, which are parsed as NaN.
pub fn read_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            let v = match field.parse::<f64>() {
                Ok(v) => v,
                Err(_) if c == 0 => f64::NAN,
                Err(_) => {
                    return Err(parse_err(
                        path,
                        line,
                        format!("field `{}` is not a number: `{field}`", header[c]),
                    ))
                }
            };
            if c > 0 && !v.is_finite() {
                return Err(parse_err(path, line, format!("field `{}` is not finite", header[c])));
            }
            columns[c].push(v);
        }
    }
    Ok((header, columns))
}

pub fn write_series(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    write_table(path, &["t".to_owned(), "watts".to_owned()], &[values.to_vec()])
}

/// Writes `t` plus the given columns. All columns must have equal length.
pub fn write_table(path: impl AsRef<Path>, header: &[String], columns: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let n = columns.first().map_or(0, Vec::len);
    debug_assert!(columns.iter().all(|c| c.len() == n));
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..n {
        out.push_str(&t.to_string());
        for col in columns {
            out.push(',');
            out.push_str(&col[t].to_string());
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
