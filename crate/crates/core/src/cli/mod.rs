//! Run configuration and the command implementations
//! behind the `eagrs` binary.

mod commands;
mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcdata::SyntheticConfig;
use crate::linalg::RngStream;
use crate::lrp::{MeanAxis, RelevanceRule};
use crate::roiselect::{AblationCase, Step3Config};
use crate::sae::Step1Config;

pub use commands::{
    cmd_analyze, cmd_pretrain, cmd_relevance, cmd_synth, cmd_train, parse_sweep, read_predictions, Overrides,
    PredictionRow,
};
pub use pipeline::{
    build_features, compute_relevance, cross_validate, load_subjects, new_sae, pretrain_sae, sweep_q, CvOutcome,
    FoldReport, MetricReport, SubjectPrediction, SweepRow,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// JSON-lines manifest; relative paths resolve against the working directory.
    Manifest { path: PathBuf },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct RelevanceConfig {
    pub rule: RelevanceRule,
    pub mean_axis: MeanAxis,
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Cut as a fraction of the tallest merge.
    pub cut_height: f64,
    /// Overrides `cut_height` when set.
    #[serde(default)]
    pub clusters: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cut_height: 0.3,
            clusters: None,
        }
    }
}

/// Every knob of an experiment. `seed` is the single root of randomness: the
/// per-step seeds are derived from it by [`RunConfig::normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub seed: u64,
    /// SAE code widths; `{1.5·D, 0.3·D}` when absent.
    #[serde(default)]
    pub sae_hidden: Option<Vec<usize>>,
    pub step1: Step1Config,
    #[serde(default)]
    pub relevance: RelevanceConfig,
    pub step3: Step3Config,
    pub folds: usize,
    pub ablation: AblationCase,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            data: DataSource::Synthetic(SyntheticConfig::default()),
            seed: 0,
            sae_hidden: None,
            step1: Step1Config::default(),
            relevance: RelevanceConfig::default(),
            step3: Step3Config::default(),
            folds: 5,
            ablation: AblationCase::Full,
            analysis: AnalysisConfig::default(),
        };
        cfg.normalize();
        cfg
    }
}

const KEY_INIT: u64 = 0;
const KEY_STEP1: u64 = 1;
const KEY_FOLDS: u64 = 2;
const KEY_STEP3: u64 = 3;
const KEY_EVAL: u64 = 4;

impl RunConfig {
    pub fn derived_seed(&self, key: u64) -> u64 {
        RngStream::new(self.seed).split(key).seed()
    }

    pub fn init_seed(&self) -> u64 {
        self.derived_seed(KEY_INIT)
    }

    pub fn fold_seed(&self) -> u64 {
        self.derived_seed(KEY_FOLDS)
    }

    pub fn eval_seed(&self) -> u64 {
        self.derived_seed(KEY_EVAL)
    }

    /// Rewrites the step seeds from the root seed.
    pub fn normalize(&mut self) {
        self.step1.seed = self.derived_seed(KEY_STEP1);
        self.step3.seed = self.derived_seed(KEY_STEP3);
    }

    pub fn validate(&self) -> Result<()> {
        self.step1.validate()?;
        self.step3.validate()?;
        self.relevance.rule.validate()?;
        if self.folds < 3 {
            return Err(Error::Config(format!("folds must be at least 3, got {}", self.folds)));
        }
        if let Some(h) = &self.sae_hidden {
            if h.is_empty() || h.contains(&0) {
                return Err(Error::Config("sae_hidden widths must be positive".into()));
            }
        }
        if !(self.analysis.cut_height >= 0.0) {
            return Err(Error::Config("analysis.cut_height must be non-negative".into()));
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate(),
            DataSource::Manifest { path } if !path.is_file() => Err(Error::Config(format!(
                "data.path: dataset manifest {} does not exist",
                path.display()
            ))),
            DataSource::Manifest { .. } => Ok(()),
        }
    }

    /// Canonical JSON form stored in the run directory.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// One experiment's directory: `config.json`, `checkpoints/`, `relevance/`,
/// `reports/` and `logs/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Relative `run` paths are placed under `run_root` when one is given.
    pub fn resolve(run_root: Option<&Path>, run: &Path) -> Self {
        let root = match run_root {
            Some(base) if run.is_relative() => base.join(run),
            _ => run.to_path_buf(),
        };
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<()> {
        for sub in ["checkpoints", "relevance", "reports", "logs"] {
            fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/sae.ckpt")
    }

    pub fn sweep_checkpoint(&self, q: f64) -> PathBuf {
        self.root.join(format!("checkpoints/sae_q{q:.2}.ckpt"))
    }

    pub fn relevance(&self) -> PathBuf {
        self.root.join("relevance/relevance.eagr")
    }

    pub fn rep_vectors(&self) -> PathBuf {
        self.root.join("relevance/repvectors.csv")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.root.join("logs/pretrain.csv")
    }

    pub fn train_log(&self, case: AblationCase, fold: usize) -> PathBuf {
        self.root.join(format!("logs/train_{case}_fold{fold}.csv"))
    }

    pub fn sweep_summary(&self) -> PathBuf {
        self.root.join("reports/q_sweep.csv")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("reports/folds.csv")
    }

    pub fn metrics(&self, case: AblationCase) -> PathBuf {
        self.root.join(format!("reports/metrics_{case}.csv"))
    }

    pub fn predictions(&self, case: AblationCase) -> PathBuf {
        self.root.join(format!("reports/predictions_{case}.csv"))
    }

    pub fn mcnemar(&self, case: AblationCase) -> PathBuf {
        self.root.join(format!("reports/mcnemar_{case}.json"))
    }

    pub fn selection_ratios(&self, case: AblationCase) -> PathBuf {
        self.root.join(format!("reports/sr_{case}.csv"))
    }

    pub fn dendrogram(&self, case: AblationCase) -> PathBuf {
        self.root.join(format!("reports/dendrogram_{case}.json"))
    }

    pub fn subtypes(&self, case: AblationCase) -> PathBuf {
        self.root.join(format!("reports/subtypes_{case}.csv"))
    }
}

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidRatio(_)
        | Error::NonPositiveTemperature(_)
        | Error::UnknownActivation(_)
        | Error::ClassTooSmall { .. } => 2,
        Error::Diverged(_) | Error::NonFiniteLoss => 3,
        Error::RoiMismatch { .. } => 4,
        Error::MissingFile(_) | Error::MissingRelevance(_) | Error::MissingArtifact(_) | Error::UntrainedModel => 5,
        _ => 1,
    }
}
