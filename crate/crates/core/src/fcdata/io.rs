//! Dataset files: a JSON-lines manifest plus one CSV matrix per subject.
//!
//! Manifest lines look like
//! `{"id":"sub-0001","label":1,"site":"NYU","fc_path":"fc/sub-0001.csv"}` with
//! `fc_path` relative to the manifest's directory. FC files carry a header row
//! of ROI names followed by `R` rows of `R` values.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{Label, Subject};

const FC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub label: u8,
    #[serde(default)]
    pub site: Option<String>,
    pub fc_path: String,
}

fn parse_err(path: &Path, line: u64, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        msg: msg.into(),
    }
}

pub fn write_fc_csv(path: &Path, fc: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..fc.cols()).map(|i| format!("roi_{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..fc.rows() {
        let row: Vec<String> = fc.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an FC CSV and validates it as a correlation matrix.
pub fn read_fc_csv(path: &Path) -> Result<Matrix> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?;
    let r = reader
        .headers()
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?
        .len();
    let mut data = Vec::with_capacity(r * r);
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, 1, e.to_string())
        })?;
        let line = rec.position().map_or(rows as u64 + 2, |p| p.line());
        if rec.len() != r {
            return Err(parse_err(
                path,
                line,
                rec.len().min(r) + 1,
                format!("expected {r} columns, found {}", rec.len()),
            ));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, col + 1, format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, col + 1, "non-finite value"));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != r {
        return Err(parse_err(path, rows as u64 + 2, 1, format!("expected {r} rows, found {rows}")));
    }
    let m = Matrix::from_vec(r, r, data)?;
    if let Some((i, j, d)) = m.asymmetry(FC_TOL) {
        return Err(parse_err(path, i as u64 + 2, j + 1, format!("asymmetric entry (|delta| = {d:e})")));
    }
    for i in 0..r {
        if (m.get(i, i) - 1.0).abs() > FC_TOL {
            return Err(parse_err(path, i as u64 + 2, i + 1, "diagonal entry is not 1"));
        }
    }
    if m.as_slice().iter().any(|v| v.abs() > 1.0 + FC_TOL) {
        return Err(parse_err(path, 0, 0, "correlation outside [-1, 1]"));
    }
    Ok(m)
}

/// Writes the manifest at `manifest` and FC files under `<manifest dir>/fc/`.
pub fn save_dataset(subjects: &[Subject], manifest: &Path) -> Result<()> {
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(dir.join("fc"))?;
    let mut w = BufWriter::new(File::create(manifest)?);
    for s in subjects {
        let rel = format!("fc/{}.csv", s.id);
        write_fc_csv(&dir.join(&rel), &s.fc)?;
        let rec = ManifestRecord {
            id: s.id.clone(),
            label: s.label.as_u8(),
            site: s.site.clone(),
            fc_path: rel,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(manifest: &Path) -> Result<Vec<Subject>> {
    if !manifest.is_file() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let dir: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let reader = BufReader::new(File::open(manifest)?);
    let mut subjects = Vec::new();
    let mut roi_count = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(manifest, lineno, e.column(), e.to_string()))?;
        let label = Label::from_u8(rec.label)
            .ok_or_else(|| parse_err(manifest, lineno, 1, format!("label must be 0 or 1, got {}", rec.label)))?;
        let fc = read_fc_csv(&dir.join(&rec.fc_path))?;
        match roi_count {
            None => roi_count = Some(fc.rows()),
            Some(r) if r != fc.rows() => {
                return Err(parse_err(
                    manifest,
                    lineno,
                    1,
                    format!("subject {} has {} ROIs, expected {r}", rec.id, fc.rows()),
                ))
            }
            _ => {}
        }
        subjects.push(Subject {
            id: rec.id,
            fc,
            label,
            site: rec.site,
        });
    }
    Ok(subjects)
}
