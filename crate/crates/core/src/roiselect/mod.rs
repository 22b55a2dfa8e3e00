//! ROI-level representative vectors and the gated classifier trained on
//! top of the pretrained encoder.

mod model;
mod psi;
mod svm;
mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, pairs, Matrix};
use crate::lrp::{MeanAxis, RelevanceTensor};

pub use model::{classify, AblationCase, ClassifierInput, GateDraw, Step3Forward, Step3Model};
pub use psi::{psi_hidden_dims, PsiNetwork};
pub use svm::LinearSvm;
pub use train::{
    fit_fold, CohortFeatures, FeatureScaler, FoldModel, Prediction, Step3Config, Step3Log, TrainedFold,
};

/// `f_v` and `f_c` for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RepVectors {
    pub f_v: Vec<f64>,
    pub f_c: Vec<f64>,
}

impl RepVectors {
    pub fn rois(&self) -> usize {
        self.f_v.len()
    }

    /// Channel stack `f = [f_v ‖ f_c]`, one `[f_v, f_c]` pair per ROI.
    pub fn channels(&self) -> Vec<[f64; 2]> {
        self.f_v.iter().zip(&self.f_c).map(|(v, c)| [*v, *c]).collect()
    }
}

/// Row-wise above-mean statistics of `S̄`.
///
/// For each row, entries strictly below the row mean are dropped; `f_v` sums
/// the kept entries and `f_c` counts them.
pub fn representative_vectors_from_mean(mean: &Matrix) -> Result<RepVectors> {
    ensure_finite(mean.as_slice(), "mean relevance")?;
    let r = mean.rows();
    let mut f_v = vec![0.0; r];
    let mut f_c = vec![0.0; r];
    for row in 0..r {
        let values = mean.row(row);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        for &v in values {
            let k = if v < avg { 0.0 } else { 1.0 };
            f_v[row] += v * k;
            f_c[row] += k;
        }
    }
    Ok(RepVectors { f_v, f_c })
}

pub fn representative_vectors(s: &RelevanceTensor, axis: MeanAxis) -> Result<RepVectors> {
    ensure_finite(s.values(), "relevance tensor")?;
    representative_vectors_from_mean(&s.mean(axis))
}

/// [`representative_vectors`] over a cohort, parallel across subjects.
pub fn cohort_rep_vectors(tensors: &[RelevanceTensor], axis: MeanAxis) -> Result<Vec<RepVectors>> {
    tensors
        .par_iter()
        .map(|t| representative_vectors(t, axis))
        .collect()
}

/// `f'[i, j] = (g_i + g_j) / 2`.
pub fn symmetrize_gate(g: &[f64]) -> Matrix {
    let r = g.len();
    Matrix::from_fn(r, r, |i, j| (g[i] + g[j]) / 2.0)
}

/// Upper-triangle entries of [`symmetrize_gate`], in connection order.
pub fn gate_weights_flat(g: &[f64]) -> Vec<f64> {
    pairs(g.len()).map(|(i, j)| (g[i] + g[j]) / 2.0).collect()
}

/// Writes `id,f_v_0..f_v_{R-1},f_c_0..f_c_{R-1}` rows.
pub fn write_rep_vectors_csv(path: &Path, ids: &[String], reps: &[RepVectors]) -> Result<()> {
    if ids.len() != reps.len() {
        return Err(Error::LengthMismatch(ids.len(), reps.len()));
    }
    let r = reps.first().map_or(0, RepVectors::rois);
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["id".to_string()];
    header.extend((0..r).map(|k| format!("f_v_{k}")));
    header.extend((0..r).map(|k| format!("f_c_{k}")));
    writeln!(w, "{}", header.join(","))?;
    for (id, rep) in ids.iter().zip(reps) {
        let mut row = vec![id.clone()];
        row.extend(rep.f_v.iter().chain(&rep.f_c).map(|v| v.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rep_vectors_csv(path: &Path) -> Result<(Vec<String>, Vec<RepVectors>)> {
    if !path.is_file() {
        return Err(Error::MissingRelevance(path.display().to_string()));
    }
    let parse_err = |line: u64, column: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(1, 1, e.to_string()))?;
    let width = reader.headers().map_err(|e| parse_err(1, 1, e.to_string()))?.len();
    if width < 3 || (width - 1) % 2 != 0 {
        return Err(parse_err(1, 1, format!("unexpected column count {width}")));
    }
    let r = (width - 1) / 2;
    let (mut ids, mut reps) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), 1, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut values = Vec::with_capacity(2 * r);
        for (col, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, col + 1, format!("not a number: `{field}`")))?;
            values.push(v);
        }
        ids.push(rec[0].to_string());
        let f_c = values.split_off(r);
        reps.push(RepVectors { f_v: values, f_c });
    }
    Ok((ids, reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngStream;

    fn rows(r: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(r).unwrap()
    }

    #[test]
    fn hand_worked_rows() {
        let rep = representative_vectors_from_mean(&rows(&[vec![0.5, 1.5], vec![1.0, 1.0]])).unwrap();
        assert_eq!(rep.f_v, vec![1.5, 2.0]);
        assert_eq!(rep.f_c, vec![1.0, 2.0]);
        assert_eq!(rep.channels(), vec![[1.5, 1.0], [2.0, 2.0]]);
    }

    #[test]
    fn rejects_non_finite() {
        let t = RelevanceTensor::zeros("a", 2);
        assert!(representative_vectors(&t, MeanAxis::Third).is_ok());
        let m = Matrix::from_fn(2, 2, |_, _| 1.0);
        let mut bad = m.clone();
        bad.as_mut_slice()[1] = f64::NAN;
        assert!(representative_vectors_from_mean(&bad).is_err());
    }

    #[test]
    fn gate_matrix() {
        assert_eq!(symmetrize_gate(&[1.0, 0.0]), rows(&[vec![1.0, 0.5], vec![0.5, 0.0]]));
        assert_eq!(symmetrize_gate(&[1.0; 3]), Matrix::from_fn(3, 3, |_, _| 1.0));
        let mut rng = RngStream::new(8);
        let g: Vec<f64> = (0..6).map(|_| rng.next_uniform()).collect();
        let m = symmetrize_gate(&g);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert_eq!(m.get(i, j), (g[i] + g[j]) / 2.0);
            }
        }
        assert_eq!(gate_weights_flat(&g), crate::linalg::flatten_upper(&m).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rep.csv");
        let reps = vec![
            RepVectors {
                f_v: vec![0.1, -2.5e-7, 3.0],
                f_c: vec![1.0, 2.0, 3.0],
            },
            RepVectors {
                f_v: vec![1.0 / 3.0, 0.0, 7.25],
                f_c: vec![0.0, 1.0, 2.0],
            },
        ];
        let ids = vec!["a".to_string(), "b".to_string()];
        write_rep_vectors_csv(&p, &ids, &reps).unwrap();
        let (back_ids, back) = read_rep_vectors_csv(&p).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back, reps);
    }
}
