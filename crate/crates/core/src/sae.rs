//! Stacked autoencoder trained greedily, one encoder/generator pair at a time,
//! on ROI-masked connection vectors.
//!
//! Level `ℓ` pairs encoder `E_ℓ` with generator `G_ℓ`. A full pass is
//! `E_1 → .. → E_L → G_L → .. → G_1`; `E_1` uses SELU and every other layer,
//! generator outputs included, uses tanh. Level 1 minimises `MSE(X, X̂)`;
//! level `ℓ ≥ 2` minimises `α·MSE(X, X̂) + (1−α)·MSE(h_{ℓ−1}, ĥ_{ℓ−1})` with
//! all lower levels frozen and `X̂` decoded through the frozen generators.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcdata::{apply_mask_flat, sample_mask};
use crate::linalg::{connection_count, ensure_finite, roi_count_for, RngStream};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint, LayerKind, LayerRecord};
use crate::nn::{accumulate, loss, scale_grads, Activation, AdamConfig, AdamState, Dense, Parameterized, Sequential};

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    rois: usize,
    encoder: Vec<Dense>,
    /// `G_1 .. G_L`; `G_ℓ` maps level `ℓ` back to level `ℓ − 1`.
    generator: Vec<Dense>,
    trained: Vec<bool>,
}

/// Hidden widths `{1.5·D, 0.3·D}` for `r` ROIs.
pub fn default_hidden_dims(r: usize) -> Vec<usize> {
    let d = connection_count(r) as f64;
    vec![((1.5 * d).round() as usize).max(1), ((0.3 * d).round() as usize).max(1)]
}

impl SaeModel {
    /// Random model for `rois` ROIs with the given hidden widths.
    pub fn new(rois: usize, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config("autoencoder needs at least one non-empty hidden layer".into()));
        }
        let mut dims = vec![connection_count(rois)];
        dims.extend_from_slice(hidden);
        let encoder = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == 0 { Activation::Selu } else { Activation::Tanh };
                Dense::init(w[0], w[1], act, true, rng)
            })
            .collect();
        let generator = dims
            .windows(2)
            .map(|w| Dense::init(w[1], w[0], Activation::Tanh, true, rng))
            .collect();
        Ok(Self {
            rois,
            encoder,
            generator,
            trained: vec![false; hidden.len()],
        })
    }

    pub fn rois(&self) -> usize {
        self.rois
    }

    pub fn input_dim(&self) -> usize {
        connection_count(self.rois)
    }

    pub fn levels(&self) -> usize {
        self.encoder.len()
    }

    /// `[D, D_1, .., D_L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.encoder.iter().map(Dense::outputs))
            .collect()
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn generator(&self) -> &[Dense] {
        &self.generator
    }

    pub fn encoder_mut(&mut self) -> &mut [Dense] {
        &mut self.encoder
    }

    pub fn generator_mut(&mut self) -> &mut [Dense] {
        &mut self.generator
    }

    pub fn is_trained(&self, level: usize) -> bool {
        self.trained.get(level.wrapping_sub(1)).copied().unwrap_or(false)
    }

    pub fn fully_trained(&self) -> bool {
        self.trained.iter().all(|t| *t)
    }

    /// Layers in forward order `E_1..E_L, G_L..G_1`.
    pub fn layers(&self) -> Vec<&Dense> {
        self.encoder.iter().chain(self.generator.iter().rev()).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.encoder.iter_mut().chain(self.generator.iter_mut().rev()).collect()
    }

    /// Flags every level as trained, for models whose weights were set by hand.
    pub fn mark_trained(&mut self) {
        self.trained.iter_mut().for_each(|t| *t = true);
    }

    /// Full encode/decode pass with caches, regardless of training state.
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in self.encoder.iter_mut().chain(self.generator.iter_mut().rev()) {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// `G(E(x̃))` for a trained model; caches stay populated for relevance propagation.
    pub fn reconstruct(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.fully_trained() {
            return Err(Error::UntrainedModel);
        }
        let out = self.forward(x)?;
        ensure_finite(&out, "reconstruction")?;
        Ok(out)
    }

    /// Copy of the encoder stack with every bias removed.
    pub fn bias_free_encoder(&self) -> Result<Sequential> {
        if !self.fully_trained() {
            return Err(Error::UntrainedEncoder);
        }
        let mut layers = self.encoder.clone();
        for l in &mut layers {
            l.strip_bias();
            l.clear_cache();
        }
        Ok(Sequential::new(layers))
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.encoder
            .iter()
            .zip(&self.trained)
            .map(|(l, t)| LayerRecord::from_dense(l, *t))
            .chain(
                self.generator
                    .iter()
                    .zip(&self.trained)
                    .map(|(l, t)| LayerRecord::from_dense(l, *t)),
            )
            .collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        if records.is_empty() || !records.len().is_multiple_of(2) {
            return Err(Error::BadCheckpoint("autoencoder needs 2·L layers".into()));
        }
        if records.iter().any(|r| r.kind == LayerKind::ChannelMerge) {
            return Err(Error::BadCheckpoint("unexpected channel merge in autoencoder".into()));
        }
        let levels = records.len() / 2;
        let (enc, gen) = records.split_at(levels);
        let rois = roi_count_for(enc[0].inputs)
            .ok_or_else(|| Error::BadCheckpoint("input width is not a triangular number".into()))?;
        for k in 0..levels {
            let prev_out = if k == 0 { enc[0].inputs } else { enc[k - 1].outputs };
            if enc[k].inputs != prev_out || gen[k].inputs != enc[k].outputs || gen[k].outputs != enc[k].inputs {
                return Err(Error::BadCheckpoint(format!("inconsistent widths at level {}", k + 1)));
            }
        }
        Ok(Self {
            rois,
            encoder: enc.iter().map(LayerRecord::to_dense).collect::<Result<_>>()?,
            generator: gen.iter().map(LayerRecord::to_dense).collect::<Result<_>>()?,
            trained: enc.iter().zip(gen).map(|(e, g)| e.trained && g.trained).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(BufWriter::new(File::create(path)?), &self.to_records())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_records(&read_checkpoint(BufReader::new(File::open(path)?))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Config {
    pub q: f64,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Early stopping on validation loss; `None` trains for the full epoch count.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for Step1Config {
    fn default() -> Self {
        Self {
            q: 0.1,
            alpha: 0.5,
            lr: 1e-3,
            batch_size: 50,
            epochs: 300,
            weight_decay: 5e-5,
            seed: 0,
            patience: None,
        }
    }
}

impl Step1Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.q) {
            return Err(Error::InvalidRatio(self.q));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Epoch-averaged losses for one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub level: usize,
    pub epoch: usize,
    pub rec_loss_x: f64,
    /// Hidden reconstruction loss; zero at level 1.
    pub rec_loss_h: f64,
    pub objective: f64,
}

struct SampleLoss {
    rec_x: f64,
    rec_h: f64,
    objective: f64,
}

/// Forward/backward for one masked sample at `level`; gradients for `E_level`
/// and `G_level` are added to `grads` (encoder weights, bias, generator weights, bias).
fn level_step(
    model: &mut SaeModel,
    level: usize,
    alpha: f64,
    masked: &[f64],
    target: &[f64],
    grads: Option<&mut [Vec<f64>]>,
) -> Result<SampleLoss> {
    let idx = level - 1;
    let mut h = masked.to_vec();
    for layer in &mut model.encoder[..idx] {
        h = layer.forward(&h)?;
    }
    let h_prev = h;
    let code = model.encoder[idx].forward(&h_prev)?;
    let h_hat = model.generator[idx].forward(&code)?;
    let mut x_hat = h_hat.clone();
    for layer in model.generator[..idx].iter_mut().rev() {
        x_hat = layer.forward(&x_hat)?;
    }

    let (wx, wh) = if level == 1 { (1.0, 0.0) } else { (alpha, 1.0 - alpha) };
    let rec_x = loss::mse_loss(target, &x_hat)?;
    let rec_h = if level == 1 { 0.0 } else { loss::mse_loss(&h_prev, &h_hat)? };
    let objective = wx * rec_x + wh * rec_h;
    if !objective.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss at level {level}")));
    }

    if let Some(grads) = grads {
        let mut g: Vec<f64> = loss::mse_grad(target, &x_hat)?.into_iter().map(|v| v * wx).collect();
        for layer in &model.generator[..idx] {
            g = layer.backward_input(&g)?;
        }
        if level > 1 && wh != 0.0 {
            for (gi, hi) in g.iter_mut().zip(loss::mse_grad(&h_prev, &h_hat)?) {
                *gi += wh * hi;
            }
        }
        let (enc_g, gen_g) = grads.split_at_mut(2);
        let g = model.generator[idx].backward(&g, gen_g)?;
        model.encoder[idx].backward(&g, enc_g)?;
    }
    Ok(SampleLoss {
        rec_x,
        rec_h,
        objective,
    })
}

fn level_params(model: &mut SaeModel, idx: usize) -> Vec<&mut [f64]> {
    let (enc, gen) = (&mut model.encoder[idx], &mut model.generator[idx]);
    let mut p = enc.param_slices_mut();
    p.extend(gen.param_slices_mut());
    p
}

/// Objective of `level` for one `(masked, target)` pair and its gradients
/// with respect to `E_level` and `G_level` (encoder weights, bias, generator
/// weights, bias). Lower levels are read but not differentiated.
pub fn level_loss_and_grads(
    model: &mut SaeModel,
    level: usize,
    alpha: f64,
    masked: &[f64],
    target: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if level == 0 || level > model.levels() {
        return Err(Error::Config(format!("level {level} out of range 1..={}", model.levels())));
    }
    let idx = level - 1;
    let mut grads = model.encoder[idx].zero_grads();
    grads.extend(model.generator[idx].zero_grads());
    let l = level_step(model, level, alpha, masked, target, Some(&mut grads))?;
    Ok((l.objective, grads))
}

impl SaeModel {
    /// Trainable slices of one level, ordered as in [`level_loss_and_grads`].
    pub fn level_params(&self, level: usize) -> Vec<&[f64]> {
        let mut p = self.encoder[level - 1].param_slices();
        p.extend(self.generator[level - 1].param_slices());
        p
    }

    pub fn level_params_mut(&mut self, level: usize) -> Vec<&mut [f64]> {
        level_params(self, level - 1)
    }
}

fn masked_copy(x: &[f64], rois: usize, q: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    let mask = sample_mask(rois, q, rng)?;
    let mut v = x.to_vec();
    apply_mask_flat(&mut v, rois, &mask)?;
    Ok(v)
}

fn validation_loss(model: &mut SaeModel, level: usize, cfg: &Step1Config, data: &[Vec<f64>]) -> Result<f64> {
    let mut rng = RngStream::new(cfg.seed).split(0x7A11D ^ level as u64);
    let rois = model.rois;
    let mut total = 0.0;
    for x in data {
        let masked = masked_copy(x, rois, cfg.q, &mut rng)?;
        total += level_step(model, level, cfg.alpha, &masked, x, None)?.objective;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains `E_level`/`G_level` with every lower level frozen.
///
/// `data` holds unmasked connection vectors; a fresh ROI mask is drawn for
/// every sample on every pass.
pub fn train_level(
    model: &mut SaeModel,
    data: &[Vec<f64>],
    cfg: &Step1Config,
    level: usize,
    validation: Option<&[Vec<f64>]>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if level == 0 || level > model.levels() {
        return Err(Error::Config(format!("level {level} out of range 1..={}", model.levels())));
    }
    if (1..level).any(|l| !model.is_trained(l)) {
        return Err(Error::PrerequisiteNotTrained(level));
    }
    if data.is_empty() {
        return Err(Error::Config("no training data".into()));
    }
    let d = model.input_dim();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }

    let idx = level - 1;
    let root = RngStream::new(cfg.seed).split(level as u64);
    let mut order_rng = root.split(0);
    let mut mask_rng = root.split(1);
    let mut adam = {
        let p = level_params(model, idx);
        let shapes: Vec<usize> = p.iter().map(|s| s.len()).collect();
        AdamState::new(cfg.adam(), &shapes)
    };
    let zero_grads = || -> Vec<Vec<f64>> {
        let mut g = model.encoder[idx].zero_grads();
        g.extend(model.generator[idx].zero_grads());
        g
    };
    let template = zero_grads();

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Dense, Dense)> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let (mut sum_x, mut sum_h, mut sum_obj) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = template.clone();
            for &i in batch {
                let masked = masked_copy(&data[i], model.rois, cfg.q, &mut mask_rng)?;
                let mut sample_grads = template.clone();
                let l = level_step(model, level, cfg.alpha, &masked, &data[i], Some(&mut sample_grads))?;
                accumulate(&mut grads, &sample_grads, 1.0);
                sum_x += l.rec_x;
                sum_h += l.rec_h;
                sum_obj += l.objective;
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            adam.step(&mut level_params(model, idx), &grads)?;
        }
        let n = data.len() as f64;
        let log = EpochLog {
            level,
            epoch,
            rec_loss_x: sum_x / n,
            rec_loss_h: sum_h / n,
            objective: sum_obj / n,
        };
        if !log.objective.is_finite() {
            return Err(Error::Diverged(format!("level {level}, epoch {epoch}")));
        }
        logs.push(log);

        if let (Some(patience), Some(val)) = (cfg.patience, validation) {
            let v = validation_loss(model, level, cfg, val)?;
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, model.encoder[idx].clone(), model.generator[idx].clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    if let Some((_, enc, gen)) = best {
        model.encoder[idx] = enc;
        model.generator[idx] = gen;
    }
    model.trained[idx] = true;
    Ok(logs)
}

pub fn train_first_layer(
    model: &mut SaeModel,
    data: &[Vec<f64>],
    cfg: &Step1Config,
) -> Result<Vec<EpochLog>> {
    train_level(model, data, cfg, 1, None)
}

/// Trains every level in order; returns the concatenated logs.
pub fn pretrain(
    model: &mut SaeModel,
    data: &[Vec<f64>],
    cfg: &Step1Config,
    validation: Option<&[Vec<f64>]>,
) -> Result<Vec<EpochLog>> {
    let mut logs = Vec::new();
    for level in 1..=model.levels() {
        logs.extend(train_level(model, data, cfg, level, validation)?);
    }
    Ok(logs)
}

/// Mean squared error on the masked connections only, for the model and for
/// zero imputation, using one fixed mask per sample drawn from `seed`.
pub fn masked_reconstruction_error(
    model: &mut SaeModel,
    data: &[Vec<f64>],
    q: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let rois = model.rois;
    let mut rng = RngStream::new(seed);
    let (mut model_err, mut zero_err, mut n) = (0.0, 0.0, 0usize);
    for x in data {
        let mask = sample_mask(rois, q.max(f64::MIN_POSITIVE), &mut rng)?;
        let mut masked = x.clone();
        apply_mask_flat(&mut masked, rois, &mask)?;
        let out = model.forward(&masked)?;
        for (((i, j), xv), ov) in crate::linalg::pairs(rois).zip(x).zip(&out) {
            if mask.contains(i) || mask.contains(j) {
                model_err += (ov - xv).powi(2);
                zero_err += xv * xv;
                n += 1;
            }
        }
    }
    let n = n.max(1) as f64;
    Ok((model_err / n, zero_err / n))
}
