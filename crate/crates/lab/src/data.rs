//! CSV input and output. Every file written here uses commas, `.` decimals,
//! a header row and LF line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use amprob_core::clustering::Dataset;
use amprob_core::dynamics::Trajectory;
use amprob_core::iclebm::EnergyGrid;
use amprob_core::numerics::Tensor;

use crate::error::{LabError, Result};

/// Reads a dataset with a header row, numeric feature columns and an
/// optional integer `label` column.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() {
        return Err(LabError::Parse { path: path.into(), line: 1, msg: "missing header row".into() });
    }
    let label_col = headers.iter().position(|h| h == "label");
    let d = headers.len() - label_col.is_some() as usize;
    if d == 0 {
        return Err(LabError::Parse { path: path.into(), line: 1, msg: "no feature columns".into() });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, field) in rec.iter().enumerate() {
            if Some(j) == label_col {
                let l: usize = field.parse().map_err(|_| LabError::Parse {
                    path: path.into(),
                    line,
                    msg: format!("label {field:?} is not a nonnegative integer"),
                })?;
                labels.push(l);
            } else {
                let v: f64 = field.parse().map_err(|_| LabError::Parse {
                    path: path.into(),
                    line,
                    msg: format!("column {:?}: {field:?} is not a number", &headers[j]),
                })?;
                if !v.is_finite() {
                    return Err(LabError::Parse { path: path.into(), line, msg: format!("non-finite value {field:?}") });
                }
                features.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(LabError::Parse { path: path.into(), line: 1, msg: "dataset has a header but no rows".into() });
    }
    let name = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    let labels = label_col.map(|_| labels);
    if let Some(l) = &labels {
        let mut seen: Vec<usize> = l.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(LabError::Parse { path: path.into(), line: 1, msg: "labels must cover 0..C without gaps".into() });
        }
    }
    Ok(Dataset::new(name, n, d, features, labels)?)
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => LabError::Parse {
            path: path.into(),
            line,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Io(_) => LabError::Format { path: path.into(), msg: e.to_string() },
        _ => LabError::Parse { path: path.into(), line, msg: e.to_string() },
    }
}

/// Buffered CSV writer with a fixed header.
pub struct CsvOut {
    w: csv::Writer<BufWriter<File>>,
    path: std::path::PathBuf,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let f = File::create(path).map_err(|e| LabError::io(path, e))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(f));
        w.write_record(header).map_err(|e| csv_error(path, e))?;
        Ok(CsvOut { w, path: path.into() })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(self) -> Result<()> {
        let path = self.path;
        let mut inner = self.w.into_inner().map_err(|e| LabError::io(&path, e.into_error()))?;
        inner.flush().map_err(|e| LabError::io(&path, e))
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_grid(path: &Path, grid: &EnergyGrid) -> Result<()> {
    let mut out = CsvOut::create(path, &["x", "y", "energy"])?;
    for (j, y) in grid.ys.iter().enumerate() {
        for (i, x) in grid.xs.iter().enumerate() {
            out.row([num(*x), num(*y), num(grid.get(i, j))])?;
        }
    }
    out.finish()
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let d = t.states.first().map_or(0, |s| s.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.push("energy".into());
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &hdr)?;
    for ((step, s), e) in t.steps.iter().zip(&t.states).zip(&t.energies) {
        let mut row = vec![step.to_string()];
        row.extend(s.iter().map(|v| num(*v)));
        row.push(num(*e));
        out.row(row)?;
    }
    out.finish()
}

pub fn write_points(path: &Path, points: &Tensor) -> Result<()> {
    let header: Vec<String> = (0..points.cols()).map(|i| format!("x_{i}")).collect();
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &hdr)?;
    for r in 0..points.rows() {
        out.row(points.row_slice(r).iter().map(|v| num(*v)))?;
    }
    out.finish()
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| LabError::io(path, e))
}
