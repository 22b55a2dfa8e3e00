use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration step. Leaves are `0..n`; the cluster formed at step `s` is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// `sqrt(2·ΔESS)` of the merge.
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

/// Ward linkage over Euclidean distances via the Lance–Williams recurrence.
pub fn ward_cluster(points: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "clustering features" });
    }
    // Squared merge heights between active slots.
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d[i][j] = s;
            d[j][i] = s;
        }
    }
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d[i][k] + (nj + nk) * d[j][k] - nk * dij) / (ni + nj + nk);
            d[i][k] = v;
            d[k][i] = v;
        }
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        size[i] += size[j];
        active[j] = false;
        id[i] = n + step;
        merges.push(Merge {
            a,
            b,
            height: dij.max(0.0).sqrt(),
            size: size[i],
        });
    }
    Ok(Dendrogram { leaves: n, merges })
}

impl Dendrogram {
    fn labels_after(&self, applied: usize) -> Vec<usize> {
        let n = self.leaves;
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (s, m) in self.merges.iter().take(applied).enumerate() {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra] = n + s;
            parent[rb] = n + s;
        }
        let mut roots: Vec<usize> = Vec::new();
        (0..n)
            .map(|leaf| {
                let r = find(&mut parent, leaf);
                match roots.iter().position(|&x| x == r) {
                    Some(p) => p,
                    None => {
                        roots.push(r);
                        roots.len() - 1
                    }
                }
            })
            .collect()
    }

    /// Flat labels for exactly `k` clusters, numbered by first appearance.
    pub fn cut_count(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.leaves {
            return Err(Error::Config(format!("cluster count {k} outside 1..={}", self.leaves)));
        }
        Ok(self.labels_after(self.leaves - k))
    }

    /// Flat labels joining every merge whose height is at most `fraction` of the tallest.
    pub fn cut_height(&self, fraction: f64) -> Vec<usize> {
        let max = self.merges.iter().map(|m| m.height).fold(0.0, f64::max);
        let threshold = fraction * max;
        let applied = self.merges.iter().take_while(|m| m.height <= threshold).count();
        self.labels_after(applied)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dendrogram serialises")
    }
}
