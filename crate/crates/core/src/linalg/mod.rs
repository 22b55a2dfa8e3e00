//! Dense matrices and the upper-triangle connection layout.
//!
//! Connection vectors always use row-major upper-triangle order without the
//! diagonal: `(0,1), (0,2), .., (0,R-1), (1,2), ..`. Every file format and
//! golden value in the crate depends on this order.

mod rng;

pub use rng::RngStream;

use crate::error::{Error, Result};

/// Symmetry tolerance accepted by [`flatten_upper`].
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "matrix data" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(n, m, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `y = self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect())
    }

    /// `y = selfᵀ * x`.
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.cols];
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x) {
            if xi == 0.0 {
                continue;
            }
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += w * xi;
            }
        }
        Ok(y)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch { what: "hadamard" });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// First entry pair whose asymmetry exceeds `tol`.
    pub fn asymmetry(&self, tol: f64) -> Option<(usize, usize, f64)> {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = (self.get(i, j) - self.get(j, i)).abs();
                if d > tol || d.is_nan() {
                    return Some((i, j, d));
                }
            }
        }
        None
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Number of off-diagonal upper-triangle entries for `r` ROIs.
#[inline]
pub const fn connection_count(r: usize) -> usize {
    r * r.saturating_sub(1) / 2
}

/// Recovers the ROI count from a connection count, if it is triangular.
pub fn roi_count_for(d: usize) -> Option<usize> {
    let r = ((1.0 + (1.0 + 8.0 * d as f64).sqrt()) / 2.0).round() as usize;
    (connection_count(r) == d).then_some(r.max(1))
}

/// Flat index of connection `(i, j)`, `i != j`, in upper-triangle order.
#[inline]
pub fn pair_index(r: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < r && j < r);
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * (2 * r - a - 1) / 2 + (b - a - 1)
}

/// Inverse of [`pair_index`]: all `(i, j)` with `i < j` in flat order.
pub fn pairs(r: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..r).flat_map(move |i| ((i + 1)..r).map(move |j| (i, j)))
}

/// Vectorises the strict upper triangle of a symmetric matrix.
pub fn flatten_upper(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if let Some((row, col, delta)) = m.asymmetry(SYMMETRY_TOL) {
        return Err(Error::AsymmetricBeyondTolerance { row, col, delta });
    }
    Ok(pairs(m.rows()).map(|(i, j)| m.get(i, j)).collect())
}

/// Symmetric matrix with zero diagonal from an upper-triangle vector.
pub fn unflatten_upper(v: &[f64], r: usize) -> Result<Matrix> {
    let d = connection_count(r);
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let mut m = Matrix::zeros(r, r);
    for ((i, j), &x) in pairs(r).zip(v) {
        m.set(i, j, x);
        m.set(j, i, x);
    }
    Ok(m)
}

/// Rejects vectors containing NaN or infinities.
pub fn ensure_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_three_rois() {
        let (a, b, c) = (0.2, -0.4, 0.7);
        let m = Matrix::from_rows(&[vec![1.0, a, b], vec![a, 1.0, c], vec![b, c, 1.0]]).unwrap();
        assert_eq!(flatten_upper(&m).unwrap(), vec![a, b, c]);
    }

    #[test]
    fn flatten_two_rois_identity() {
        assert_eq!(flatten_upper(&Matrix::identity(2)).unwrap(), vec![0.0]);
    }

    #[test]
    fn flatten_110_rois_has_5995_connections() {
        assert_eq!(flatten_upper(&Matrix::identity(110)).unwrap().len(), 5995);
        assert_eq!(connection_count(110), 5995);
        assert_eq!(roi_count_for(5995), Some(110));
        assert_eq!(roi_count_for(5996), None);
    }

    #[test]
    fn flatten_rejects_bad_shapes() {
        assert!(matches!(
            flatten_upper(&Matrix::zeros(2, 3)),
            Err(Error::NonSquare { .. })
        ));
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(matches!(
            flatten_upper(&m),
            Err(Error::AsymmetricBeyondTolerance { row: 0, col: 1, .. })
        ));
        let near = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5 + 1e-12, 1.0]]).unwrap();
        assert!(flatten_upper(&near).is_ok());
    }

    #[test]
    fn unflatten_examples() {
        let m = unflatten_upper(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(
            m,
            Matrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]])
                .unwrap()
        );
        assert_eq!(unflatten_upper(&[], 1).unwrap(), Matrix::zeros(1, 1));
        assert!(matches!(
            unflatten_upper(&[1.0, 2.0], 3),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn round_trip_4950_bit_exact() {
        let mut rng = RngStream::new(11);
        let v: Vec<f64> = (0..4950).map(|_| rng.next_uniform() * 2.0 - 1.0).collect();
        let back = flatten_upper(&unflatten_upper(&v, 100).unwrap()).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pair_index_matches_enumeration() {
        for r in 2..12 {
            for (k, (i, j)) in pairs(r).enumerate() {
                assert_eq!(pair_index(r, i, j), k);
                assert_eq!(pair_index(r, j, i), k);
            }
        }
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![6.0, 3.5]);
        assert_eq!(
            m.matvec_t(&[1.0, 2.0]).unwrap(),
            m.transpose().matvec(&[1.0, 2.0]).unwrap()
        );
        assert!(Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(r in 1usize..=32, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let mut m = Matrix::identity(r);
            for (i, j) in pairs(r) {
                let x = rng.next_uniform() * 2.0 - 1.0;
                m.set(i, j, x);
                m.set(j, i, x);
            }
            let v = flatten_upper(&m).unwrap();
            prop_assert_eq!(v.len(), connection_count(r));
            let back = unflatten_upper(&v, r).unwrap();
            prop_assert_eq!(flatten_upper(&back).unwrap(), v);
        }
    }
}
