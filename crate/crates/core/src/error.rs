use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the testbed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid user count {0}: at least two users are required")]
    InvalidUserCount(usize),

    #[error("infeasible budget: total resources {total} are below the encoding length {encoding}")]
    InfeasibleBudget { total: usize, encoding: usize },

    #[error("non-integral split: surplus {surplus} is not divisible by {divisor}")]
    NonIntegralSplit { surplus: usize, divisor: usize },

    #[error("plan inconsistent: {0}")]
    PlanInconsistent(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid split: {private} private layers requested from {layers} feature layers")]
    InvalidSplit { private: usize, layers: usize },

    #[error("feature map has zero power and cannot be normalized")]
    DegenerateZeroPower,

    #[error("plan has no common layers; separation must be skipped")]
    EmptyCommon,

    #[error("discriminator score {0} lies outside the open interval (0, 1)")]
    InvalidScore(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged in phase {phase} at step {step}")]
    TrainingDiverged { phase: u8, step: usize },

    #[error("phase order violation: {0}")]
    PhaseOrderViolation(String),

    #[error("budget infeasible: {needed} bits needed at minimum quality, {budget} available")]
    BudgetInfeasible { needed: usize, budget: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bit count {0} is not a multiple of the modulation order")]
    PaddingRequired(usize),

    #[error("missing artifact for {cell}: {path}")]
    MissingArtifact { cell: String, path: PathBuf },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("image codec: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
