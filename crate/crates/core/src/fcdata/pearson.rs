use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};

/// ROI time series, one row per ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldSeries {
    values: Matrix,
}

impl BoldSeries {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.cols() < 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: values.cols(),
            });
        }
        ensure_finite(values.as_slice(), "BOLD series")?;
        Ok(Self { values })
    }

    pub fn rois(&self) -> usize {
        self.values.rows()
    }

    pub fn timepoints(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Sample Pearson correlation between every pair of ROI rows.
pub fn pearson_fc(ts: &BoldSeries) -> Result<Matrix> {
    let (r, t) = (ts.rois(), ts.timepoints());
    let mut centered = Vec::with_capacity(r);
    for roi in 0..r {
        let row = ts.values.row(roi);
        if row.iter().all(|v| *v == row[0]) {
            return Err(Error::ZeroVariance { roi });
        }
        let mean = row.iter().sum::<f64>() / t as f64;
        let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVariance { roi });
        }
        centered.push((c, norm));
    }
    let mut fc = Matrix::identity(r);
    for i in 0..r {
        for j in (i + 1)..r {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            let cov: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let rho = (cov / (na * nb)).clamp(-1.0, 1.0);
            fc.set(i, j, rho);
            fc.set(j, i, rho);
        }
    }
    Ok(fc)
}
