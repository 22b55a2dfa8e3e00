use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix asymmetric at ({row},{col}): |delta| = {delta:e}")]
    AsymmetricBeyondTolerance { row: usize, col: usize, delta: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch in {what}")]
    ShapeMismatch { what: &'static str },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("loss is not finite")]
    NonFiniteLoss,

    #[error("ROI {roi} has zero variance")]
    ZeroVariance { roi: usize },

    #[error("masking ratio must lie in [0, 1), got {0}")]
    InvalidRatio(f64),

    #[error("index {index} out of range for {len} ROIs")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("covariance could not be repaired: {0}")]
    DegenerateCovariance(String),

    #[error("parse error in {path} at line {line}, column {column}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        msg: String,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("training diverged ({0})")]
    Diverged(String),

    #[error("layer {0} depends on untrained lower layers")]
    PrerequisiteNotTrained(usize),

    #[error("model has untrained layers")]
    UntrainedModel,

    #[error("output unit {unit} out of range ({len} units)")]
    UnitOutOfRange { unit: usize, len: usize },

    #[error("layer {0} has no forward cache; run a forward pass first")]
    MissingForwardCache(usize),

    #[error("encoder is not initialised from a pre-trained checkpoint")]
    UntrainedEncoder,

    #[error("no relevance vectors for subject `{0}`")]
    MissingRelevance(String),

    #[error("only one class present in labels")]
    SingleClass,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("no discordant pairs between the two classifiers")]
    NoDiscordantPairs,

    #[error("class {class} has {count} members, fewer than {k} folds")]
    ClassTooSmall { class: u8, count: usize, k: usize },

    #[error("group is empty")]
    EmptyGroup,

    #[error("need at least two subjects, got {0}")]
    TooFewSubjects(usize),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("checkpoint has {checkpoint} ROIs but the data has {data}")]
    RoiMismatch { checkpoint: usize, data: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
