//! Synthetic cohorts with planted class-specific coupling.
//!
//! Every subject shares a modular background (ROI `k` belongs to module
//! `k % module_count`, with within-module correlation scaled by a per-subject
//! factor in `[0.5, 1.5)`). Planted ROIs of the subject's class, or of its ASD
//! subtype when subtypes are configured, get `effect_size` added to every
//! pairwise covariance. The covariance is repaired to the nearest PSD matrix
//! by clipping eigenvalues, rescaled to unit diagonal, and `t` Gaussian
//! samples are drawn from it.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};

use super::{pearson_fc, BoldSeries, Label, Subject};

const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub rois: usize,
    pub n_per_class: usize,
    pub timepoints: usize,
    pub planted_asd: Vec<usize>,
    #[serde(default)]
    pub planted_td: Vec<usize>,
    /// When non-empty, ASD subjects cycle through these planted sets instead of `planted_asd`.
    #[serde(default)]
    pub asd_subtypes: Vec<Vec<usize>>,
    pub effect_size: f64,
    #[serde(default = "default_modules")]
    pub module_count: usize,
    #[serde(default = "default_module_strength")]
    pub module_strength: f64,
    pub seed: u64,
}

fn default_modules() -> usize {
    4
}

fn default_module_strength() -> f64 {
    0.3
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rois: 16,
            n_per_class: 100,
            timepoints: 200,
            planted_asd: vec![2, 5, 11, 14],
            planted_td: Vec::new(),
            asd_subtypes: Vec::new(),
            effect_size: 0.6,
            module_count: default_modules(),
            module_strength: default_module_strength(),
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rois < 2 {
            return Err(Error::Config("synthetic cohort needs at least 2 ROIs".into()));
        }
        if self.n_per_class < 1 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        if self.timepoints < 3 {
            return Err(Error::Config("timepoints must be at least 3".into()));
        }
        if !(self.effect_size >= 0.0) || !self.effect_size.is_finite() {
            return Err(Error::Config(format!("effect_size must be >= 0, got {}", self.effect_size)));
        }
        let all = self
            .planted_asd
            .iter()
            .chain(&self.planted_td)
            .chain(self.asd_subtypes.iter().flatten());
        for &roi in all {
            if roi >= self.rois {
                return Err(Error::IndexOutOfRange {
                    index: roi,
                    len: self.rois,
                });
            }
        }
        Ok(())
    }

    /// ROIs planted for subject `index` (ASD subjects are the odd indices).
    pub fn planted_for(&self, index: usize) -> &[usize] {
        match label_for(index) {
            Label::Td => &self.planted_td,
            Label::Asd if self.asd_subtypes.is_empty() => &self.planted_asd,
            Label::Asd => &self.asd_subtypes[(index / 2) % self.asd_subtypes.len()],
        }
    }

    /// ASD subtype index of subject `index`, if subtypes are configured.
    pub fn subtype_of(&self, index: usize) -> Option<usize> {
        (label_for(index) == Label::Asd && !self.asd_subtypes.is_empty())
            .then(|| (index / 2) % self.asd_subtypes.len())
    }
}

fn label_for(index: usize) -> Label {
    if index % 2 == 1 {
        Label::Asd
    } else {
        Label::Td
    }
}

fn covariance(cfg: &SyntheticConfig, planted: &[usize], rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let r = cfg.rois;
    let modules = cfg.module_count.max(1);
    let scale = 0.5 + rng.next_uniform();
    let mut cov = DMatrix::<f64>::identity(r, r);
    for i in 0..r {
        for j in (i + 1)..r {
            if i % modules == j % modules {
                let v = cfg.module_strength * scale;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }
    for (a, &i) in planted.iter().enumerate() {
        for &j in &planted[a + 1..] {
            if i != j {
                cov[(i, j)] += cfg.effect_size;
                cov[(j, i)] += cfg.effect_size;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let mut repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..r).map(|i| repaired[(i, i)]).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateCovariance("non-positive variance after PSD repair".into()));
    }
    for i in 0..r {
        for j in 0..r {
            repaired[(i, j)] /= (d[i] * d[j]).sqrt();
        }
    }
    Ok(repaired)
}

fn sample_subject(cfg: &SyntheticConfig, index: usize, root: &RngStream) -> Result<Subject> {
    let mut rng = root.split(index as u64);
    let cov = covariance(cfg, cfg.planted_for(index), &mut rng)?;
    let eig = SymmetricEigen::new(cov);
    let r = cfg.rois;
    // Square-root factor V·sqrt(Λ).
    let factor = DMatrix::from_fn(r, r, |i, k| {
        eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt()
    });
    let t = cfg.timepoints;
    let mut values = Matrix::zeros(r, t);
    let mut z = vec![0.0; r];
    for step in 0..t {
        for zi in z.iter_mut() {
            *zi = rng.next_normal();
        }
        for i in 0..r {
            let x: f64 = (0..r).map(|k| factor[(i, k)] * z[k]).sum();
            values.set(i, step, x);
        }
    }
    let fc = pearson_fc(&BoldSeries::new(values)?)?;
    Ok(Subject {
        id: format!("sub-{index:04}"),
        fc,
        label: label_for(index),
        site: Some("synthetic".to_string()),
    })
}

/// Generates `2 * n_per_class` subjects, alternating TD and ASD.
///
/// Each subject draws from its own split stream, so the result does not depend
/// on the number of worker threads.
pub fn generate_cohort(cfg: &SyntheticConfig) -> Result<Vec<Subject>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    (0..2 * cfg.n_per_class)
        .into_par_iter()
        .map(|i| sample_subject(cfg, i, &root))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(effect: f64, n: usize) -> SyntheticConfig {
        SyntheticConfig {
            rois: 8,
            n_per_class: n,
            timepoints: 120,
            planted_asd: vec![1, 4, 6],
            effect_size: effect,
            seed: 3,
            ..SyntheticConfig::default()
        }
    }

    fn planted_mean(subjects: &[Subject], label: Label, planted: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for s in subjects.iter().filter(|s| s.label == label) {
            for (a, &i) in planted.iter().enumerate() {
                for &j in &planted[a + 1..] {
                    sum += s.fc.get(i, j);
                    n += 1;
                }
            }
        }
        sum / n as f64
    }

    #[test]
    fn deterministic_and_balanced() {
        let cfg = small(0.6, 6);
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| s.label == Label::Asd).count(), 6);
        for s in &a {
            assert!(s.fc.asymmetry(0.0).is_none());
            assert!((0..8).all(|i| s.fc.get(i, i) == 1.0));
        }
    }

    #[test]
    fn null_effect_has_no_group_difference() {
        let cfg = small(0.0, 100);
        let subjects = generate_cohort(&cfg).unwrap();
        let diff = planted_mean(&subjects, Label::Asd, &cfg.planted_asd)
            - planted_mean(&subjects, Label::Td, &cfg.planted_asd);
        assert!(diff.abs() < 0.1, "{diff}");
    }

    #[test]
    fn huge_effect_saturates_coupling() {
        let cfg = small(50.0, 3);
        let subjects = generate_cohort(&cfg).unwrap();
        for s in subjects.iter().filter(|s| s.label == Label::Asd) {
            for (i, j) in [(1, 4), (1, 6), (4, 6)] {
                assert!(s.fc.get(i, j) > 0.95, "{}", s.fc.get(i, j));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small(0.6, 2);
        cfg.planted_asd.push(8);
        assert!(matches!(generate_cohort(&cfg), Err(Error::IndexOutOfRange { .. })));
        let mut cfg = small(-0.1, 2);
        cfg.planted_asd.clear();
        assert!(matches!(generate_cohort(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn subtypes_cycle_through_asd_subjects() {
        let cfg = SyntheticConfig {
            asd_subtypes: vec![vec![0, 1], vec![2, 3]],
            ..small(0.6, 4)
        };
        assert_eq!(cfg.subtype_of(1), Some(0));
        assert_eq!(cfg.subtype_of(3), Some(1));
        assert_eq!(cfg.subtype_of(5), Some(0));
        assert_eq!(cfg.subtype_of(2), None);
        assert_eq!(cfg.planted_for(3), &[2, 3]);
    }
}
