//! Layer-wise relevance propagation over the autoencoder and the per-subject
//! connection-wise relevance tensors built from it.
//!
//! Relevance is redistributed through each dense layer's linear part,
//! `R_i = a_i · Σ_j w_ji R_j / (z_j + ε·sign(z_j))`, where `z_j` is the cached
//! pre-activation (bias included) and `sign(0) = +1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcdata::{apply_mask_flat, MaskSet};
use crate::linalg::{flatten_upper, pair_index, unflatten_upper, Matrix};
use crate::nn::Dense;
use crate::sae::SaeModel;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    LrpZero,
    LrpEpsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRule {
    pub kind: RuleKind,
    pub epsilon: f64,
}

impl Default for RelevanceRule {
    fn default() -> Self {
        Self::epsilon(DEFAULT_EPSILON)
    }
}

impl RelevanceRule {
    pub fn zero() -> Self {
        Self {
            kind: RuleKind::LrpZero,
            epsilon: 0.0,
        }
    }

    pub fn epsilon(epsilon: f64) -> Self {
        Self {
            kind: RuleKind::LrpEpsilon,
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RuleKind::LrpZero if self.epsilon != 0.0 => {
                Err(Error::Config("lrp-zero requires epsilon = 0".into()))
            }
            _ if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() => {
                Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)))
            }
            _ => Ok(()),
        }
    }

    fn stabilise(&self, z: f64) -> f64 {
        let sign = if z >= 0.0 { 1.0 } else { -1.0 };
        z + self.epsilon * sign
    }
}

/// Redistributes `relevance` (one value per output unit) onto the layer's inputs.
pub fn lrp_layer(layer: &Dense, relevance: &[f64], rule: RelevanceRule) -> Result<Vec<f64>> {
    let cache = layer.cache().ok_or(Error::MissingForwardCache(0))?;
    if relevance.len() != layer.outputs() {
        return Err(Error::DimensionMismatch {
            expected: layer.outputs(),
            got: relevance.len(),
        });
    }
    let w = layer.weights();
    let mut out = vec![0.0; layer.inputs()];
    for (j, &rj) in relevance.iter().enumerate() {
        if rj == 0.0 {
            continue;
        }
        let denom = rule.stabilise(cache.pre_activation[j]);
        if denom == 0.0 {
            continue;
        }
        let s = rj / denom;
        for (o, wji) in out.iter_mut().zip(w.row(j)) {
            *o += wji * s;
        }
    }
    for (o, a) in out.iter_mut().zip(&cache.input) {
        *o *= a;
    }
    Ok(out)
}

/// Propagates from one output unit of the last layer back to the first layer's input.
///
/// `layers` are in forward order and must hold caches from the same forward pass.
pub fn lrp_through(layers: &[&Dense], unit: usize, rule: RelevanceRule) -> Result<Vec<f64>> {
    rule.validate()?;
    let last = layers.last().ok_or(Error::ShapeMismatch { what: "empty layer stack" })?;
    let cache = last
        .cache()
        .ok_or(Error::MissingForwardCache(layers.len() - 1))?;
    if unit >= last.outputs() {
        return Err(Error::UnitOutOfRange {
            unit,
            len: last.outputs(),
        });
    }
    let mut relevance = vec![0.0; last.outputs()];
    relevance[unit] = cache.output[unit];
    for (k, layer) in layers.iter().enumerate().rev() {
        relevance = lrp_layer(layer, &relevance, rule).map_err(|e| match e {
            Error::MissingForwardCache(_) => Error::MissingForwardCache(k),
            other => other,
        })?;
    }
    Ok(relevance)
}

/// Input relevances for reconstruction unit `unit` after a forward pass on `model`.
pub fn lrp_backward(model: &SaeModel, unit: usize, rule: RelevanceRule) -> Result<Vec<f64>> {
    lrp_through(&model.layers(), unit, rule)
}

/// Relevance map for target connection `(i, j)` of a reconstruction made with ROI `i` masked.
///
/// Returns the zero matrix when `j == i`; otherwise the input relevances
/// unflattened to `R×R` with row and column `i` zeroed.
pub fn phi(model: &SaeModel, i: usize, j: usize, rule: RelevanceRule) -> Result<Matrix> {
    let r = model.rois();
    for idx in [i, j] {
        if idx >= r {
            return Err(Error::IndexOutOfRange { index: idx, len: r });
        }
    }
    if i == j {
        return Ok(Matrix::zeros(r, r));
    }
    let rel = lrp_backward(model, pair_index(r, i, j), rule)?;
    let mut map = unflatten_upper(&rel, r)?;
    for k in 0..r {
        map.set(i, k, 0.0);
        map.set(k, i, 0.0);
    }
    Ok(map)
}

fn check_input(model: &SaeModel, x: &Matrix) -> Result<()> {
    if x.rows() != model.rois() || x.cols() != model.rois() {
        return Err(Error::DimensionMismatch {
            expected: model.rois(),
            got: x.rows(),
        });
    }
    Ok(())
}

/// `s'_r = Σ_j phi(x̂, r, j)` with ROI `r` masked in the input.
///
/// `model` is cloned so that the shared snapshot's caches are never touched.
pub fn relevance_for_seed(model: &SaeModel, x: &Matrix, r: usize, rule: RelevanceRule) -> Result<Matrix> {
    check_input(model, x)?;
    let rois = model.rois();
    if r >= rois {
        return Err(Error::IndexOutOfRange { index: r, len: rois });
    }
    let mut local = model.clone();
    let mut input = flatten_upper(x)?;
    apply_mask_flat(&mut input, rois, &MaskSet::from_indices(vec![r]))?;
    local.reconstruct(&input)?;
    let mut acc = Matrix::zeros(rois, rois);
    for j in (0..rois).filter(|&j| j != r) {
        let map = phi(&local, r, j, rule)?;
        for (a, m) in acc.as_mut_slice().iter_mut().zip(map.as_slice()) {
            *a += m;
        }
    }
    Ok(acc)
}

/// `S[r, a, b] = s'_r[a, b]` for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTensor {
    pub subject_id: String,
    rois: usize,
    values: Vec<f64>,
}

/// Axis of `S` averaged to form `S̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanAxis {
    First,
    Second,
    #[default]
    Third,
}

impl RelevanceTensor {
    pub fn zeros(subject_id: impl Into<String>, rois: usize) -> Self {
        Self {
            subject_id: subject_id.into(),
            rois,
            values: vec![0.0; rois * rois * rois],
        }
    }

    pub fn from_values(subject_id: impl Into<String>, rois: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rois * rois * rois {
            return Err(Error::DimensionMismatch {
                expected: rois * rois * rois,
                got: values.len(),
            });
        }
        crate::linalg::ensure_finite(&values, "relevance tensor")?;
        Ok(Self {
            subject_id: subject_id.into(),
            rois,
            values,
        })
    }

    pub fn rois(&self) -> usize {
        self.rois
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, a: usize, b: usize) -> f64 {
        self.values[(r * self.rois + a) * self.rois + b]
    }

    pub fn slice(&self, r: usize) -> Matrix {
        let n = self.rois * self.rois;
        Matrix::from_vec(self.rois, self.rois, self.values[r * n..(r + 1) * n].to_vec())
            .expect("slice has R×R finite values")
    }

    pub fn set_slice(&mut self, r: usize, m: &Matrix) {
        let n = self.rois * self.rois;
        self.values[r * n..(r + 1) * n].copy_from_slice(m.as_slice());
    }

    /// `S̄` as an `R×R` matrix over the two remaining axes, in order.
    pub fn mean(&self, axis: MeanAxis) -> Matrix {
        let r = self.rois;
        let mut out = Matrix::zeros(r, r);
        for a in 0..r {
            for b in 0..r {
                let sum: f64 = (0..r)
                    .map(|k| match axis {
                        MeanAxis::First => self.get(k, a, b),
                        MeanAxis::Second => self.get(a, k, b),
                        MeanAxis::Third => self.get(a, b, k),
                    })
                    .sum();
                out.set(a, b, sum / r as f64);
            }
        }
        out
    }
}

/// Stacks `s'_r` for every seed ROI; parallel over seeds and deterministic.
pub fn global_relevance(model: &SaeModel, x: &Matrix, rule: RelevanceRule, subject_id: &str) -> Result<RelevanceTensor> {
    check_input(model, x)?;
    if !model.fully_trained() {
        return Err(Error::UntrainedModel);
    }
    let slices: Vec<Matrix> = (0..model.rois())
        .into_par_iter()
        .map(|r| relevance_for_seed(model, x, r, rule))
        .collect::<Result<_>>()?;
    let mut t = RelevanceTensor::zeros(subject_id, model.rois());
    for (r, s) in slices.iter().enumerate() {
        t.set_slice(r, s);
    }
    crate::linalg::ensure_finite(t.values(), "relevance tensor")?;
    Ok(t)
}

/// [`global_relevance`] for a cohort, in input order.
pub fn cohort_relevance(
    model: &SaeModel,
    inputs: &[(String, Matrix)],
    rule: RelevanceRule,
) -> Result<Vec<RelevanceTensor>> {
    inputs
        .par_iter()
        .map(|(id, x)| global_relevance(model, x, rule, id))
        .collect()
}

const MAGIC: &[u8; 4] = b"EAGR";
const VERSION: u32 = 1;

/// Writes tensors as little-endian f32 blocks. All tensors must share `R`.
pub fn write_relevance<W: Write>(mut w: W, tensors: &[RelevanceTensor]) -> Result<()> {
    let r = tensors.first().map_or(0, RelevanceTensor::rois);
    if let Some(t) = tensors.iter().find(|t| t.rois != r) {
        return Err(Error::DimensionMismatch {
            expected: r,
            got: t.rois,
        });
    }
    w.write_all(MAGIC)?;
    for v in [VERSION, r as u32, tensors.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in tensors {
        for v in &t.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads tensors back; subject ids are taken from `ids` when given, else the block index.
pub fn read_relevance<R: Read>(mut rd: R, ids: Option<&[String]>) -> Result<Vec<RelevanceTensor>> {
    let bad = |m: &str| Error::BadCheckpoint(format!("relevance file: {m}"));
    let mut head = [0u8; 16];
    rd.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |k: usize| u32::from_le_bytes(head[k..k + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let (r, n) = (word(8) as usize, word(12) as usize);
    if let Some(ids) = ids {
        if ids.len() != n {
            return Err(Error::LengthMismatch(ids.len(), n));
        }
    }
    let block = r * r * r;
    let mut buf = vec![0u8; block * 4];
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        rd.read_exact(&mut buf).map_err(|_| bad("truncated block"))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let id = ids.map_or_else(|| k.to_string(), |ids| ids[k].clone());
        out.push(RelevanceTensor::from_values(id, r, values)?);
    }
    if rd.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save_relevance(path: &Path, tensors: &[RelevanceTensor]) -> Result<()> {
    write_relevance(BufWriter::new(File::create(path)?), tensors)
}

pub fn load_relevance(path: &Path, ids: Option<&[String]>) -> Result<Vec<RelevanceTensor>> {
    if !path.is_file() {
        return Err(Error::MissingRelevance(path.display().to_string()));
    }
    read_relevance(BufReader::new(File::open(path)?), ids)
}

/// Writes `S̄` as a headerless CSV of `R` rows.
pub fn write_mean_csv(path: &Path, mean: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..mean.rows() {
        let row: Vec<String> = mean.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
