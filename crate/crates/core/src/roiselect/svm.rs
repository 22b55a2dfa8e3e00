use crate::error::{Error, Result};
use crate::linalg::dot;

/// Soft-margin linear SVM fitted by full-batch subgradient descent on
/// `λ/2·‖w‖² + mean(max(0, 1 − y·(w·x + b)))` with `y ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn fit(x: &[Vec<f64>], labels: &[u8], lambda: f64, iterations: usize) -> Result<Self> {
        if x.len() != labels.len() {
            return Err(Error::LengthMismatch(x.len(), labels.len()));
        }
        if !labels.contains(&0) || !labels.contains(&1) {
            return Err(Error::SingleClass);
        }
        let d = x[0].len();
        if let Some(bad) = x.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let n = x.len() as f64;
        let sign = |l: u8| if l == 1 { 1.0 } else { -1.0 };
        let mut svm = Self {
            weights: vec![0.0; d],
            bias: 0.0,
        };
        let mut best = (svm.objective(x, labels, lambda), svm.clone());
        for t in 1..=iterations {
            let mut gw: Vec<f64> = svm.weights.iter().map(|w| lambda * w).collect();
            let mut gb = 0.0;
            for (xi, &li) in x.iter().zip(labels) {
                let y = sign(li);
                if y * svm.decision(xi) < 1.0 {
                    for (g, v) in gw.iter_mut().zip(xi) {
                        *g -= y * v / n;
                    }
                    gb -= y / n;
                }
            }
            let step = 1.0 / (t as f64).sqrt();
            for (w, g) in svm.weights.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            svm.bias -= step * gb;
            let obj = svm.objective(x, labels, lambda);
            if obj < best.0 {
                best = (obj, svm.clone());
            }
        }
        Ok(best.1)
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn objective(&self, x: &[Vec<f64>], labels: &[u8], lambda: f64) -> f64 {
        let hinge: f64 = x
            .iter()
            .zip(labels)
            .map(|(xi, &l)| {
                let y = if l == 1 { 1.0 } else { -1.0 };
                (1.0 - y * self.decision(xi)).max(0.0)
            })
            .sum();
        0.5 * lambda * dot(&self.weights, &self.weights) + hinge / x.len() as f64
    }
}
