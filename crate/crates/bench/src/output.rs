//! Report files. Every file is written to a temporary sibling and renamed
//! into place, so readers never see a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use diamond_core::Vector;
use serde::Serialize;
use serde_json::Value;

use crate::{BenchError, Result};

pub const SAMPLES: &str = "samples.csv";
pub const METRICS: &str = "metrics.jsonl";
pub const CONFIG_ECHO: &str = "config-echo.json";
pub const REPORT: &str = "report.svg";

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp: PathBuf = dir.join(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).map_err(io_error(&tmp))?;
    file.write_all(bytes).map_err(io_error(&tmp))?;
    file.sync_all().map_err(io_error(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_error(path))
}

/// CSV with header `x0,...,x{d-1}` and one sample per row. Floats use the
/// shortest representation that round-trips.
pub fn samples_csv(samples: &[Vector]) -> Result<Vec<u8>> {
    let d = samples.first().map_or(0, |s| s.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_error = |e: csv::Error| BenchError::Config(format!("csv encoding: {e}"));
    w.write_record((0..d).map(|j| format!("x{j}"))).map_err(csv_error)?;
    for s in samples {
        w.write_record(s.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| BenchError::Config(format!("csv encoding: {e}")))
}

/// Parses a file written by [`samples_csv`].
pub fn read_samples_csv(path: &Path) -> Result<Vec<Vector>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
            let vals = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| BenchError::Config(format!("{}: {e}", path.display()))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Vector::from_vec(vals))
        })
        .collect()
}

pub fn jsonl(rows: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        out.extend_from_slice(row.to_string().as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| BenchError::Config(format!("json encoding: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// JSON for a vector; non-finite entries become null.
pub fn vector_json(v: &Vector) -> Value {
    Value::from(v.iter().map(|x| finite_json(*x)).collect::<Vec<_>>())
}

pub fn finite_json(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else {
        Value::Null
    }
}
