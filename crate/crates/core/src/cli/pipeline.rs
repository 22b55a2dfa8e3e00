use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{confusion_metrics, mean_std, roc_auc, stratified_kfold, FoldPlan};
use crate::fcdata::{generate_cohort, load_dataset, Subject};
use crate::linalg::{flatten_upper, Matrix, RngStream};
use crate::lrp::{cohort_relevance, RelevanceTensor};
use crate::roiselect::{cohort_rep_vectors, fit_fold, AblationCase, CohortFeatures, RepVectors, Step3Log};
use crate::sae::{default_hidden_dims, masked_reconstruction_error, pretrain, EpochLog, SaeModel, Step1Config};

use super::{DataSource, RunConfig};

pub fn load_subjects(cfg: &RunConfig) -> Result<Vec<Subject>> {
    match &cfg.data {
        DataSource::Synthetic(s) => generate_cohort(s),
        DataSource::Manifest { path } => load_dataset(path).map_err(|e| match e {
            Error::MissingFile(p) => Error::Config(format!("data.path: {} does not exist", p.display())),
            other => other,
        }),
    }
}

fn flat_inputs(subjects: &[Subject]) -> Result<Vec<Vec<f64>>> {
    subjects.iter().map(|s| flatten_upper(&s.fc)).collect()
}

fn roi_count(subjects: &[Subject]) -> Result<usize> {
    subjects
        .first()
        .map(Subject::rois)
        .ok_or_else(|| Error::Config("dataset is empty".into()))
}

/// Untrained SAE with the configured widths, initialised from the run's init seed.
pub fn new_sae(cfg: &RunConfig, rois: usize) -> Result<SaeModel> {
    let hidden = cfg.sae_hidden.clone().unwrap_or_else(|| default_hidden_dims(rois));
    SaeModel::new(rois, &hidden, &mut RngStream::new(cfg.init_seed()))
}

/// Step 1 on the whole cohort; labels are never read.
pub fn pretrain_sae(cfg: &RunConfig, subjects: &[Subject]) -> Result<(SaeModel, Vec<EpochLog>)> {
    pretrain_with(cfg, &cfg.step1, subjects)
}

fn pretrain_with(cfg: &RunConfig, step1: &Step1Config, subjects: &[Subject]) -> Result<(SaeModel, Vec<EpochLog>)> {
    let mut sae = new_sae(cfg, roi_count(subjects)?)?;
    let data = flat_inputs(subjects)?;
    let logs = pretrain(&mut sae, &data, step1, None)?;
    Ok((sae, logs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub q: f64,
    pub final_objective: f64,
    /// Masked-entry MSE of the reconstruction, evaluated at the training ratio.
    pub masked_mse: f64,
    /// Same entries under zero imputation.
    pub zero_mse: f64,
}

/// Pretrains one model per masking ratio, in parallel over ratios.
pub fn sweep_q(cfg: &RunConfig, subjects: &[Subject], qs: &[f64]) -> Result<Vec<(SaeModel, SweepRow)>> {
    let data = flat_inputs(subjects)?;
    qs.par_iter()
        .map(|&q| {
            let step1 = Step1Config { q, ..cfg.step1.clone() };
            let (mut sae, logs) = pretrain_with(cfg, &step1, subjects)?;
            let (masked_mse, zero_mse) = masked_reconstruction_error(&mut sae, &data, q, cfg.eval_seed())?;
            let final_objective = logs.last().map_or(f64::NAN, |l| l.objective);
            Ok((
                sae,
                SweepRow {
                    q,
                    final_objective,
                    masked_mse,
                    zero_mse,
                },
            ))
        })
        .collect()
}

/// Step 2: relevance tensors and representative vectors for every subject.
pub fn compute_relevance(
    cfg: &RunConfig,
    sae: &SaeModel,
    subjects: &[Subject],
) -> Result<(Vec<RelevanceTensor>, Vec<RepVectors>)> {
    let r = roi_count(subjects)?;
    if sae.rois() != r {
        return Err(Error::RoiMismatch {
            checkpoint: sae.rois(),
            data: r,
        });
    }
    let inputs: Vec<(String, Matrix)> = subjects.iter().map(|s| (s.id.clone(), s.fc.clone())).collect();
    let tensors = cohort_relevance(sae, &inputs, cfg.relevance.rule)?;
    let reps = cohort_rep_vectors(&tensors, cfg.relevance.mean_axis)?;
    Ok((tensors, reps))
}

/// Aligns subjects with representative vectors (looked up by id when given).
pub fn build_features(subjects: &[Subject], reps: Option<(&[String], &[RepVectors])>) -> Result<CohortFeatures> {
    let reps = match reps {
        None => Vec::new(),
        Some((ids, reps)) => subjects
            .iter()
            .map(|s| {
                ids.iter()
                    .position(|id| *id == s.id)
                    .map(|k| reps[k].clone())
                    .ok_or_else(|| Error::MissingRelevance(s.id.clone()))
            })
            .collect::<Result<_>>()?,
    };
    Ok(CohortFeatures {
        ids: subjects.iter().map(|s| s.id.clone()).collect(),
        labels: subjects.iter().map(|s| s.label.as_u8()).collect(),
        x: flat_inputs(subjects)?,
        reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub auc: f64,
    pub acc: f64,
    pub sen: f64,
    pub spec: f64,
    pub best_epoch: usize,
    #[serde(skip)]
    pub log: Vec<Step3Log>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectPrediction {
    pub fold: usize,
    pub score: f64,
    pub pred: u8,
    pub selection: Option<Vec<u8>>,
}

/// Mean and sample standard deviation across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub auc: (f64, f64),
    pub acc: (f64, f64),
    pub sen: (f64, f64),
    pub spec: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub case: AblationCase,
    pub plan: FoldPlan,
    pub folds: Vec<FoldReport>,
    /// One entry per subject, in cohort order.
    pub predictions: Vec<SubjectPrediction>,
}

impl CvOutcome {
    pub fn summary(&self) -> MetricReport {
        let col = |f: fn(&FoldReport) -> f64| mean_std(&self.folds.iter().map(f).collect::<Vec<_>>());
        MetricReport {
            auc: col(|f| f.auc),
            acc: col(|f| f.acc),
            sen: col(|f| f.sen),
            spec: col(|f| f.spec),
        }
    }

    pub fn preds(&self) -> Vec<u8> {
        self.predictions.iter().map(|p| p.pred).collect()
    }
}

/// Full k-fold rotation of Step 3 for `case`; folds run in parallel, each
/// with its own derived seed.
pub fn cross_validate(
    cfg: &RunConfig,
    case: AblationCase,
    sae: Option<&SaeModel>,
    data: &CohortFeatures,
) -> Result<CvOutcome> {
    let plan = stratified_kfold(&data.labels, cfg.folds, cfg.fold_seed())?;
    let rotations = plan.rotations()?;
    let root = RngStream::new(cfg.step3.seed);
    let results: Vec<(FoldReport, Vec<(usize, SubjectPrediction)>)> = rotations
        .par_iter()
        .enumerate()
        .map(|(fold, rot)| {
            let step3 = crate::roiselect::Step3Config {
                seed: root.split(fold as u64).seed(),
                ..cfg.step3.clone()
            };
            let trained = fit_fold(case, sae, data, &rot.train, &rot.val, &step3)?;
            let mut preds = Vec::with_capacity(rot.test.len());
            for &i in &rot.test {
                let p = trained.model.predict(data, i)?;
                preds.push((
                    i,
                    SubjectPrediction {
                        fold,
                        score: p.score,
                        pred: p.pred,
                        selection: p.selection,
                    },
                ));
            }
            let scores: Vec<f64> = preds.iter().map(|(_, p)| p.score).collect();
            let labels: Vec<u8> = rot.test.iter().map(|&i| data.labels[i]).collect();
            let hard: Vec<u8> = preds.iter().map(|(_, p)| p.pred).collect();
            let m = confusion_metrics(&hard, &labels)?;
            Ok((
                FoldReport {
                    fold,
                    auc: roc_auc(&scores, &labels)?,
                    acc: m.acc,
                    sen: m.sen,
                    spec: m.spec,
                    best_epoch: trained.best_epoch,
                    log: trained.log,
                },
                preds,
            ))
        })
        .collect::<Result<_>>()?;

    let mut slots: Vec<Option<SubjectPrediction>> = vec![None; data.len()];
    let mut folds = Vec::with_capacity(results.len());
    for (report, preds) in results {
        for (i, p) in preds {
            slots[i] = Some(p);
        }
        folds.push(report);
    }
    let predictions = slots
        .into_iter()
        .map(|p| p.ok_or_else(|| Error::Config("fold plan does not cover every subject".into())))
        .collect::<Result<_>>()?;
    Ok(CvOutcome {
        case,
        plan,
        folds,
        predictions,
    })
}
