//! Per-sample CSV logs and atomic file output.

use std::io::Write;
use std::path::Path;

use crate::controller::RunLog;
use crate::error::{Error, Result};

/// `t, x[i].., u[i].., w_hat[i].., cost_inst, cost_cum, slow_k, param_hash`.
pub fn header(d_x: usize, d_u: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..d_x).map(|i| format!("x[{i}]")));
    h.extend((0..d_u).map(|i| format!("u[{i}]")));
    h.extend((0..d_x).map(|i| format!("w_hat[{i}]")));
    h.extend(["cost_inst", "cost_cum", "slow_k", "param_hash"].map(String::from));
    h
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a run; `cost_inst` is the interval cost integral.
pub fn to_csv_bytes(log: &RunLog) -> Result<Vec<u8>> {
    let (d_x, d_u) = (log.system.state_dim(), log.system.input_dim());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(d_x, d_u))?;
    for s in &log.samples {
        let mut row = Vec::with_capacity(2 * d_x + d_u + 5);
        row.push(fmt_f64(s.t));
        row.extend(s.x.iter().map(|v| fmt_f64(*v)));
        row.extend(s.u.iter().map(|v| fmt_f64(*v)));
        row.extend(s.w_hat.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(s.cost_interval));
        row.push(fmt_f64(s.cost_cum));
        row.push(s.slow_k.to_string());
        row.push(s.param_hash.clone());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_run_csv(log: &RunLog, path: &Path) -> Result<()> {
    write_atomic(path, &to_csv_bytes(log)?)
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub cost_inst: f64,
    pub cost_cum: f64,
    pub slow_k: usize,
    pub param_hash: String,
}

fn count_prefix(header: &csv::StringRecord, prefix: &str) -> usize {
    header.iter().filter(|h| h.starts_with(prefix)).count()
}

fn parse_f(field: &str, row: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::invalid(format!("row {row}: `{field}` is not a number")))
}

pub fn read_csv(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let d_x = count_prefix(&header, "x[");
    let d_u = count_prefix(&header, "u[");
    let expected = self::header(d_x, d_u);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::invalid("CSV header does not match the run-log schema"));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let f = |j: usize| parse_f(&rec[j], i);
        let vec_at = |start: usize, len: usize| (start..start + len).map(f).collect::<Result<Vec<f64>>>();
        let base = 1 + 2 * d_x + d_u;
        out.push(CsvRow {
            t: f(0)?,
            x: vec_at(1, d_x)?,
            u: vec_at(1 + d_x, d_u)?,
            w_hat: vec_at(1 + d_x + d_u, d_x)?,
            cost_inst: f(base)?,
            cost_cum: f(base + 1)?,
            slow_k: rec[base + 2]
                .parse()
                .map_err(|_| Error::invalid(format!("row {i}: bad slow_k")))?,
            param_hash: rec[base + 3].to_string(),
        });
    }
    Ok(out)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CsvRow>> {
    read_csv(&std::fs::read(path)?)
}
