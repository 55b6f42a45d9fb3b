//! File formats: CSV tables with 17 significant digits and binary arrays
//! behind a one-line JSON header.
//!
//! A binary array file is a JSON object on the first line, a newline, and
//! then little-endian `f64` values in row-major order. The header always has
//! `format`, `version` and `len` (number of values); the rest depends on the
//! payload.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ntk_core::kernels::{KernelKind, KernelMatrix};
use ntk_core::network::{InputPoint, Theta};
use ntk_core::spectrum::{SourceTarget, SpectralModel};
use ntk_core::tangent::CouplingReport;
use ntk_core::trainer::TrainRecord;
use serde_json::{json, Value};

use crate::error::LabError;

pub const ARRAY_FORMAT: &str = "ntk-lab-array";
pub const ARRAY_VERSION: u64 = 1;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// A CSV table built in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// A CSV cell.
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(
            row.into_iter()
                .map(|c| match c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Float(f) => fmt_f64(f),
                    Cell::Text(s) => s,
                })
                .collect(),
        );
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        fs::write(path, self.to_csv()).map_err(|e| LabError::io(path, e))
    }

    pub fn parse(text: &str) -> Table {
        let mut lines = text.lines();
        let columns = lines.next().map(|h| h.split(',').map(str::to_string).collect()).unwrap_or_default();
        let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect();
        Table { columns, rows }
    }

    pub fn read(path: &Path) -> Result<Table, LabError> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Ok(Self::parse(&text))
    }

    /// Values of a numeric column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }
}

/// Writes `header` (with `format`, `version` and `len` added) and `data`.
pub fn write_array(path: &Path, mut header: Value, data: &[f64]) -> Result<(), LabError> {
    let obj = header.as_object_mut().expect("array header must be an object");
    obj.insert("format".into(), json!(ARRAY_FORMAT));
    obj.insert("version".into(), json!(ARRAY_VERSION));
    obj.insert("len".into(), json!(data.len()));
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| LabError::io(path, e))
}

pub fn read_array(path: &Path) -> Result<(Value, Vec<f64>), LabError> {
    let f = fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| LabError::io(path, e))?;
    let header: Value = serde_json::from_str(line.trim_end()).map_err(|e| malformed(path, e))?;
    if header.get("format").and_then(Value::as_str) != Some(ARRAY_FORMAT) {
        return Err(malformed(path, "not an ntk-lab array file"));
    }
    let len = header.get("len").and_then(Value::as_u64).ok_or_else(|| malformed(path, "missing len"))? as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| LabError::io(path, e))?;
    if raw.len() != len * 8 {
        return Err(malformed(path, format!("expected {} payload bytes, found {}", len * 8, raw.len())));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, data))
}

fn malformed(path: &Path, reason: impl ToString) -> LabError {
    LabError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Gram matrix: header `n`, `kind`, `seed`, `kappa_sq`; payload `n × n`.
pub fn write_kernel(path: &Path, k: &KernelMatrix, seed: u64) -> Result<(), LabError> {
    let header = json!({
        "payload": "kernel_matrix",
        "n": k.n(),
        "kind": k.kind,
        "seed": seed,
        "kappa_sq": k.kappa_sq,
        "repair": k.repair,
    });
    write_array(path, header, k.entries())
}

pub fn read_kernel(path: &Path) -> Result<(KernelMatrix, u64), LabError> {
    let (h, data) = read_array(path)?;
    let n = h["n"].as_u64().ok_or_else(|| malformed(path, "missing n"))? as usize;
    let kind: KernelKind = serde_json::from_value(h["kind"].clone()).map_err(|e| malformed(path, e))?;
    let kappa_sq = h["kappa_sq"].as_f64().ok_or_else(|| malformed(path, "missing kappa_sq"))?;
    let seed = h["seed"].as_u64().unwrap_or(0);
    let mut k = KernelMatrix::from_entries(n, data, kind, kappa_sq)?;
    k.repair = serde_json::from_value(h["repair"].clone()).map_err(|e| malformed(path, e))?;
    Ok((k, seed))
}

/// Spectral model: header `N`, `dim`, `seed`, `kind`, `label`, `eigenvalues`;
/// payload atoms (`N × dim`), then weights (`N`), then eigenvectors (`N × N`,
/// entry `(i, j)` is `φ_j(x_i)`).
pub fn write_spectral_model(path: &Path, m: &SpectralModel) -> Result<(), LabError> {
    let n = m.len();
    let dim = m.dim();
    let mut data = Vec::with_capacity(n * (dim + 1 + n));
    for a in &m.atoms {
        data.extend_from_slice(a.as_slice());
    }
    data.extend_from_slice(&m.weights);
    data.extend_from_slice(&m.eigenvectors);
    let header = json!({
        "payload": "spectral_model",
        "N": n,
        "dim": dim,
        "seed": m.seed,
        "kind": m.kind,
        "label": m.label,
        "eigenvalues": m.eigenvalues,
    });
    write_array(path, header, &data)
}

pub fn read_spectral_model(path: &Path) -> Result<SpectralModel, LabError> {
    let (h, data) = read_array(path)?;
    let n = h["N"].as_u64().ok_or_else(|| malformed(path, "missing N"))? as usize;
    let dim = h["dim"].as_u64().ok_or_else(|| malformed(path, "missing dim"))? as usize;
    if data.len() != n * (dim + 1 + n) {
        return Err(malformed(path, "payload size does not match N and dim"));
    }
    let atoms = data[..n * dim]
        .chunks(dim)
        .map(|c| InputPoint::new(c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = data[n * dim..n * (dim + 1)].to_vec();
    let eigenvectors = data[n * (dim + 1)..].to_vec();
    Ok(SpectralModel {
        atoms,
        weights,
        eigenvalues: serde_json::from_value(h["eigenvalues"].clone()).map_err(|e| malformed(path, e))?,
        eigenvectors,
        kind: serde_json::from_value(h["kind"].clone()).map_err(|e| malformed(path, e))?,
        seed: h["seed"].as_u64().unwrap_or(0),
        label: h["label"].as_str().unwrap_or_default().to_string(),
    })
}

/// Parameter snapshots: header `width`, `dim`, `steps`; payload the
/// snapshots in order, each in the flat `[a | b_1 .. b_M | c]` layout.
pub fn write_snapshots(path: &Path, snaps: &[(usize, Theta)]) -> Result<(), LabError> {
    let (width, dim) = snaps.first().map_or((0, 0), |(_, t)| (t.width(), t.dim()));
    let steps: Vec<usize> = snaps.iter().map(|s| s.0).collect();
    let mut data = Vec::new();
    for (_, t) in snaps {
        data.extend_from_slice(t.as_slice());
    }
    write_array(path, json!({"payload": "snapshots", "width": width, "dim": dim, "steps": steps}), &data)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<(usize, Theta)>, LabError> {
    let (h, data) = read_array(path)?;
    let width = h["width"].as_u64().unwrap_or(0) as usize;
    let dim = h["dim"].as_u64().unwrap_or(0) as usize;
    let steps: Vec<usize> = serde_json::from_value(h["steps"].clone()).map_err(|e| malformed(path, e))?;
    let p = (dim + 2) * width;
    if data.len() != p * steps.len() {
        return Err(malformed(path, "payload size does not match the snapshot count"));
    }
    steps
        .iter()
        .zip(data.chunks(p.max(1)))
        .map(|(&s, c)| Ok((s, Theta::from_flat(width, dim, c.to_vec())?)))
        .collect()
}

pub fn write_target(path: &Path, t: &SourceTarget) -> Result<(), LabError> {
    let text = serde_json::to_string_pretty(t).expect("target serializes");
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn read_target(path: &Path) -> Result<SourceTarget, LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e))
}

/// `step, risk, distance` per step.
pub fn train_table(rec: &TrainRecord) -> Table {
    let mut t = Table::new(&["step", "risk", "distance"]);
    for s in &rec.steps {
        t.push(vec![s.step.into(), s.risk.into(), s.distance.into()]);
    }
    t
}

/// `step, term_I, term_II, term_III, defect` per step.
pub fn coupling_table(rep: &CouplingReport) -> Table {
    let mut t = Table::new(&["step", "term_I", "term_II", "term_III", "defect"]);
    for r in &rep.rows {
        t.push(vec![r.step.into(), r.term_i.into(), r.term_ii.into(), r.term_iii.into(), r.defect.into()]);
    }
    t
}
