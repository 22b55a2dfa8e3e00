//! Classification metrics, McNemar's test, stratified folds, selection
//! ratios and Ward clustering.

mod ward;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::RngStream;

pub use ward::{ward_cluster, Dendrogram, Merge};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties counting ½.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "scores" });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Count of (pos, neg) pairs won by the positive, in half units to stay exact.
    let mut half_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&i| labels[i] == 1).count() as u64;
        let neg = group.len() as u64 - pos;
        half_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        start = end;
    }
    Ok(half_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// Confusion counts with ASD (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

/// Accuracy plus recall on each class. A ratio with a zero denominator is
/// NaN and listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub counts: Confusion,
    pub acc: f64,
    pub sen: f64,
    pub spec: f64,
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_metrics(pred: &[u8], labels: &[u8]) -> Result<ConfusionMetrics> {
    check_lengths(pred.len(), labels.len())?;
    let mut c = Confusion::default();
    for (&p, &l) in pred.iter().zip(labels) {
        match (p == 1, l == 1) {
            (true, true) => c.tp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
        }
    }
    let mut undefined = Vec::new();
    let acc = ratio(c.tp + c.tn, pred.len(), "acc", &mut undefined);
    let sen = ratio(c.tp, c.tp + c.fn_, "sen", &mut undefined);
    let spec = ratio(c.tn, c.tn + c.fp, "spec", &mut undefined);
    Ok(ConfusionMetrics {
        counts: c,
        acc,
        sen,
        spec,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// Subjects only classifier A got right.
    pub b: usize,
    /// Subjects only classifier B got right.
    pub c: usize,
    pub chi2: f64,
    pub p: f64,
}

/// Continuity-corrected statistic from discordant counts.
pub fn mcnemar_from_counts(b: usize, c: usize) -> Result<McNemar> {
    if b + c == 0 {
        return Err(Error::NoDiscordantPairs);
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = diff * diff / (b + c) as f64;
    Ok(McNemar {
        b,
        c,
        chi2,
        p: erfc((chi2 / 2.0).sqrt()),
    })
}

pub fn mcnemar(pred_a: &[u8], pred_b: &[u8], labels: &[u8]) -> Result<McNemar> {
    check_lengths(pred_a.len(), labels.len())?;
    check_lengths(pred_b.len(), labels.len())?;
    let (mut b, mut c) = (0, 0);
    for ((&pa, &pb), &l) in pred_a.iter().zip(pred_b).zip(labels) {
        match (pa == l, pb == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    mcnemar_from_counts(b, c)
}

/// Subject-to-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

/// Index split for one rotation of the cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rotation {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == f).collect()
    }

    /// Rotation `f`: fold `f` tests, fold `f + 1 (mod k)` validates, the rest train.
    pub fn rotation(&self, f: usize) -> Result<Rotation> {
        if self.k < 3 {
            return Err(Error::Config("train/val/test rotation needs k >= 3".into()));
        }
        let val_fold = (f + 1) % self.k;
        Ok(Rotation {
            train: (0..self.assignments.len())
                .filter(|&i| self.assignments[i] != f && self.assignments[i] != val_fold)
                .collect(),
            val: self.fold(val_fold),
            test: self.fold(f),
        })
    }

    pub fn rotations(&self) -> Result<Vec<Rotation>> {
        (0..self.k).map(|f| self.rotation(f)).collect()
    }
}

/// Shuffles each class with `seed` and deals its members round-robin over the folds.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config("k must be at least 2".into()));
    }
    let mut rng = RngStream::new(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                k,
            });
        }
        rng.shuffle(&mut members);
        for i in members {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("labels must be 0 or 1, found {bad}")));
    }
    Ok(FoldPlan { k, seed, assignments })
}

/// Share of group members with each ROI selected.
pub fn selection_ratio(selections: &[Vec<u8>], group: &[bool]) -> Result<Vec<f64>> {
    check_lengths(selections.len(), group.len())?;
    let members: Vec<&Vec<u8>> = selections.iter().zip(group).filter(|(_, g)| **g).map(|(s, _)| s).collect();
    let first = members.first().ok_or(Error::EmptyGroup)?;
    let r = first.len();
    let mut counts = vec![0usize; r];
    for s in &members {
        if s.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: s.len(),
            });
        }
        for (c, &v) in counts.iter_mut().zip(s.iter()) {
            *c += usize::from(v != 0);
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / members.len() as f64).collect())
}

/// ROIs with `0.5 < SR ≤ 0.75` and with `SR > 0.75`.
pub fn sr_bands(sr: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let moderate = (0..sr.len()).filter(|&r| sr[r] > 0.5 && sr[r] <= 0.75).collect();
    let high = (0..sr.len()).filter(|&r| sr[r] > 0.75).collect();
    (moderate, high)
}

/// ROIs whose rank is within `k` even when every tie is broken against them.
pub fn top_k_strict(sr: &[f64], k: usize) -> Vec<usize> {
    (0..sr.len())
        .filter(|&r| sr.iter().filter(|&&s| s >= sr[r]).count() <= k)
        .collect()
}

/// Mean and sample standard deviation; the deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
