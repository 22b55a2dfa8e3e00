use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RngStream;
use crate::nn::{accumulate, loss, scale_grads, AdamConfig, AdamState, GateMode, GumbelGate, Parameterized};
use crate::sae::SaeModel;

use super::model::{AblationCase, ClassifierInput, GateDraw, Step3Model};
use super::psi::psi_hidden_dims;
use super::svm::LinearSvm;
use super::RepVectors;

/// Everything Step 3 needs per subject, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortFeatures {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    /// Flattened FC matrices.
    pub x: Vec<Vec<f64>>,
    /// Representative vectors; may be empty for case I.
    pub reps: Vec<RepVectors>,
}

impl CohortFeatures {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn validate(&self, case: AblationCase) -> Result<()> {
        let n = self.ids.len();
        for len in [self.labels.len(), self.x.len()] {
            if len != n {
                return Err(Error::LengthMismatch(n, len));
            }
        }
        if case != AblationCase::I && self.reps.len() != n {
            return Err(Error::MissingRelevance(format!(
                "case {case} needs representative vectors for all {n} subjects, found {}",
                self.reps.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step3Config {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Selection-network hidden widths; `{512, 15·R}` when absent.
    #[serde(default)]
    pub psi_hidden: Option<[usize; 2]>,
    #[serde(default = "default_svm_lambda")]
    pub svm_lambda: f64,
    #[serde(default = "default_svm_iterations")]
    pub svm_iterations: usize,
}

fn default_svm_lambda() -> f64 {
    1e-2
}

fn default_svm_iterations() -> usize {
    500
}

impl Default for Step3Config {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 50,
            epochs: 300,
            weight_decay: 5e-5,
            temperature: 0.01,
            seed: 0,
            psi_hidden: None,
            svm_lambda: default_svm_lambda(),
            svm_iterations: default_svm_iterations(),
        }
    }
}

impl Step3Config {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if !(self.svm_lambda > 0.0) {
            return Err(Error::Config("svm_lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Per-ROI, per-channel z-scoring fitted on training subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    mean: Vec<[f64; 2]>,
    scale: Vec<[f64; 2]>,
    keep: [bool; 2],
}

impl FeatureScaler {
    pub fn fit(reps: &[&RepVectors], keep: [bool; 2]) -> Self {
        let r = reps.first().map_or(0, |f| f.rois());
        let n = reps.len().max(1) as f64;
        let mut mean = vec![[0.0; 2]; r];
        for rep in reps {
            for (m, c) in mean.iter_mut().zip(rep.channels()) {
                m[0] += c[0] / n;
                m[1] += c[1] / n;
            }
        }
        let mut var = vec![[0.0; 2]; r];
        for rep in reps {
            for ((v, m), c) in var.iter_mut().zip(&mean).zip(rep.channels()) {
                v[0] += (c[0] - m[0]).powi(2) / n;
                v[1] += (c[1] - m[1]).powi(2) / n;
            }
        }
        let scale = var
            .iter()
            .map(|v| v.map(|s| if s > 1e-24 { s.sqrt() } else { 1.0 }))
            .collect();
        Self { mean, scale, keep }
    }

    /// Standardised channels with dropped channels set to zero.
    pub fn transform(&self, rep: &RepVectors) -> Vec<[f64; 2]> {
        rep.channels()
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(c, (m, s))| {
                let mut out = [0.0; 2];
                for k in 0..2 {
                    if self.keep[k] {
                        out[k] = (c[k] - m[k]) / s[k];
                    }
                }
                out
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `p(ASD)` for network cases, the SVM decision value otherwise.
    pub score: f64,
    pub pred: u8,
    /// Hard ROI selection when the selection network is used.
    pub selection: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FoldModel {
    Net { model: Step3Model, scaler: Option<FeatureScaler> },
    Svm { svm: LinearSvm, scaler: FeatureScaler, channel: usize },
}

impl FoldModel {
    pub fn case(&self) -> AblationCase {
        match self {
            Self::Net { model, .. } => model.case(),
            Self::Svm { channel: 0, .. } => AblationCase::II,
            Self::Svm { .. } => AblationCase::III,
        }
    }

    pub fn predict(&self, data: &CohortFeatures, index: usize) -> Result<Prediction> {
        match self {
            Self::Net { model, scaler } => {
                let f = scaler.as_ref().map(|s| s.transform(&data.reps[index])).unwrap_or_default();
                let out = model.infer(ClassifierInput { x: &data.x[index], f: &f })?;
                let score = out.probs[1];
                Ok(Prediction {
                    score,
                    pred: u8::from(score >= 0.5),
                    selection: out.gate.map(|g| g.iter().map(|v| u8::from(*v >= 0.5)).collect()),
                })
            }
            Self::Svm { svm, scaler, channel } => {
                let z: Vec<f64> = scaler.transform(&data.reps[index]).iter().map(|c| c[*channel]).collect();
                let score = svm.decision(&z);
                Ok(Prediction {
                    score,
                    pred: u8::from(score > 0.0),
                    selection: None,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step3Log {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFold {
    pub model: FoldModel,
    pub log: Vec<Step3Log>,
    /// Epoch whose snapshot was kept (lowest validation loss).
    pub best_epoch: usize,
}

fn eval_loss(model: &Step3Model, scaler: Option<&FeatureScaler>, data: &CohortFeatures, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let f = scaler.map(|s| s.transform(&data.reps[i])).unwrap_or_default();
        let out = model.infer(ClassifierInput { x: &data.x[i], f: &f })?;
        total += loss::cross_entropy_loss(&loss::one_hot(data.labels[i]), &out.probs)?;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Fits one fold of `case`: SVM cases ignore `sae`, network cases fine-tune
/// its bias-free encoder jointly with a fresh classifier (and selection network).
pub fn fit_fold(
    case: AblationCase,
    sae: Option<&SaeModel>,
    data: &CohortFeatures,
    train: &[usize],
    val: &[usize],
    cfg: &Step3Config,
) -> Result<TrainedFold> {
    cfg.validate()?;
    data.validate(case)?;
    if train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let scaler = (case != AblationCase::I).then(|| {
        let reps: Vec<&RepVectors> = train.iter().map(|&i| &data.reps[i]).collect();
        FeatureScaler::fit(&reps, case.channels())
    });

    if case.uses_svm() {
        let scaler = scaler.expect("SVM cases use representative vectors");
        let channel = usize::from(case == AblationCase::III);
        let xs: Vec<Vec<f64>> = train
            .iter()
            .map(|&i| scaler.transform(&data.reps[i]).iter().map(|c| c[channel]).collect())
            .collect();
        let ys: Vec<u8> = train.iter().map(|&i| data.labels[i]).collect();
        let svm = LinearSvm::fit(&xs, &ys, cfg.svm_lambda, cfg.svm_iterations)?;
        return Ok(TrainedFold {
            model: FoldModel::Svm { svm, scaler, channel },
            log: Vec::new(),
            best_epoch: 0,
        });
    }

    let sae = sae.ok_or(Error::UntrainedEncoder)?;
    let root = RngStream::new(cfg.seed);
    let hidden = cfg.psi_hidden.unwrap_or_else(|| psi_hidden_dims(sae.rois()));
    let mut model = Step3Model::new(case, sae, hidden, cfg.temperature, &mut root.split(0))?;
    let mut order_rng = root.split(1);
    let mut noise_gate = GumbelGate::new(cfg.temperature, root.split(2), GateMode::Sample)?;
    let mut adam = AdamState::for_params(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        &model.param_slices(),
    );
    let features: Vec<Vec<[f64; 2]>> = match &scaler {
        Some(s) => data.reps.iter().map(|r| s.transform(r)).collect(),
        None => vec![Vec::new(); data.len()],
    };
    let val_idx = if val.is_empty() { train } else { val };
    let template = model.zero_grads();
    let rois = sae.rois();

    let mut best = (eval_loss(&model, scaler.as_ref(), data, val_idx)?, model.clone(), 0usize);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = train.to_vec();
    for epoch in 1..=cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = template.clone();
            for &i in batch {
                let noise = if model.psi.is_some() { noise_gate.sample_noise(rois) } else { Vec::new() };
                let input = ClassifierInput {
                    x: &data.x[i],
                    f: &features[i],
                };
                let (ce, g) = model.loss_and_grads(input, GateDraw::Noise(&noise), data.labels[i])?;
                if !ce.is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
                }
                accumulate(&mut grads, &g, 1.0);
                total += ce;
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            adam.step(&mut model.param_slices_mut(), &grads)?;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = eval_loss(&model, scaler.as_ref(), data, val_idx)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        log.push(Step3Log {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
        }
    }
    let (_, model, best_epoch) = best;
    Ok(TrainedFold {
        model: FoldModel::Net { model, scaler },
        log,
        best_epoch,
    })
}
