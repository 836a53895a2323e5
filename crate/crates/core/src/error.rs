use thiserror::Error;

use crate::game_boost::RoundRecord;
use crate::stagewise::EpochRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("all weights are zero")]
    AllZeroWeights,

    #[error("weight {index} is negative or not finite ({value})")]
    NegativeWeight { index: usize, value: f64 },

    #[error("distribution has {got} entries but the support has {expected}")]
    SupportMismatch { expected: usize, got: usize },

    #[error("correct and candidate labels coincide ({label})")]
    SameLabel { label: usize },

    #[error("unsupported norm: {0}")]
    UnsupportedNorm(String),

    #[error("exact reach set needs d <= {max} for k >= 3 (got d = {d})")]
    DimensionTooLarge { d: usize, max: usize },

    #[error("gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f64),

    #[error("weak learner failed in round {round}: achieved error {achieved} > -gamma")]
    WeakLearnerFailed {
        round: usize,
        achieved: f64,
        trace: Vec<RoundRecord>,
    },

    #[error("a certified robust evaluator is required")]
    NonCertifiedEvaluator,

    #[error("loss or gradient is not finite")]
    NonFiniteLoss,

    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("parameters became non-finite in stage {stage}, epoch {epoch}")]
    NonFiniteParameters {
        stage: usize,
        epoch: usize,
        trace: Vec<EpochRecord>,
    },

    #[error("argument {0} is outside the open interval (0, 1)")]
    OutOfDomain(f64),

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("checker backend cannot handle this hypothesis: {0}")]
    BackendMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
