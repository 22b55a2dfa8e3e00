use crate::error::{Error, Result};
use crate::linalg::{pairs, Matrix, RngStream};

/// ROI indices whose rows and columns are zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    indices: Vec<usize>,
    ratio: f64,
}

impl MaskSet {
    /// Explicit mask; indices are sorted and deduplicated.
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices, ratio: f64::NAN }
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            ratio: 0.0,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, roi: usize) -> bool {
        self.indices.binary_search(&roi).is_ok()
    }
}

/// `⌊qR⌋` with a minimum of one when `q > 0`.
pub fn mask_count(r: usize, q: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidRatio(q));
    }
    if q == 0.0 {
        return Ok(0);
    }
    // The small offset keeps products like 0.29 * 100 from flooring to 28.
    Ok(((q * r as f64 + 1e-9).floor() as usize).clamp(1, r))
}

/// Uniformly samples ROIs without replacement.
pub fn sample_mask(r: usize, q: f64, rng: &mut RngStream) -> Result<MaskSet> {
    let k = mask_count(r, q)?;
    let mut all: Vec<usize> = (0..r).collect();
    for i in 0..k {
        let j = i + rng.next_below(r - i);
        all.swap(i, j);
    }
    let mut indices = all[..k].to_vec();
    indices.sort_unstable();
    Ok(MaskSet { indices, ratio: q })
}

fn check_range(r: usize, m: &MaskSet) -> Result<()> {
    if let Some(&bad) = m.indices.iter().find(|&&i| i >= r) {
        return Err(Error::IndexOutOfRange { index: bad, len: r });
    }
    Ok(())
}

/// `M ⊙ X` where `M` zeroes every row and column of a masked ROI.
pub fn apply_mask(x: &Matrix, m: &MaskSet) -> Result<Matrix> {
    let r = x.rows();
    check_range(r, m)?;
    let mut out = x.clone();
    for &i in &m.indices {
        for k in 0..r {
            out.set(i, k, 0.0);
            out.set(k, i, 0.0);
        }
    }
    Ok(out)
}

/// [`apply_mask`] on an already flattened connection vector.
pub fn apply_mask_flat(v: &mut [f64], r: usize, m: &MaskSet) -> Result<()> {
    check_range(r, m)?;
    if m.is_empty() {
        return Ok(());
    }
    for (slot, (i, j)) in v.iter_mut().zip(pairs(r)) {
        if m.contains(i) || m.contains(j) {
            *slot = 0.0;
        }
    }
    Ok(())
}
