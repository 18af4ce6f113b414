use alloc::string::String;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("noise variance is zero")]
    ZeroNoiseVariance,
    #[error("inversion grid with {nodes} nodes in {dim} dimensions is not supported")]
    GridTooLarge { nodes: usize, dim: usize },
    #[error("characteristic function at the origin is {0}, expected 1")]
    CfNotNormalized(f64),
    #[error("inverted density has mass {0}; grid bounds are too narrow")]
    Normalization(f64),
    #[error("mixture density needs {0} Gaussian components, above the enumeration limit")]
    TooManyComponents(usize),
    #[error("non-finite log-density at block {0}")]
    NonFiniteLogDensity(usize),
    #[error("no candidate model has a finite BIC")]
    NoFiniteCandidate,
    #[error("bootstrap needs at least 20 replications, got {0}")]
    TooFewReplications(usize),
}

/// Conditions that do not stop a computation but should be surfaced to the
/// caller. Every warning is also emitted through `log::warn!`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Warning {
    /// The period-product companion matrix has spectral radius >= 1.
    Unstable { radius: f64 },
    /// Samples after the last complete block were ignored.
    TrailingSamplesDropped { count: usize },
    /// An empirical autocovariance had an empty summation range.
    EmptyAutocovarianceSum { phase: i64, lag: i64 },
    /// The eigenvalue bound on the noise variance was not positive.
    DegenerateBound { zeta: f64 },
    /// An estimated per-phase innovation variance came out negative.
    NegativeInnovationVariance { phase: usize, value: f64 },
    /// The shifted Yule-Walker matrix of a phase is badly conditioned.
    IllConditioned { phase: usize, condition: f64 },
    /// Bootstrap replications with a non-finite statistic were excluded.
    NonFiniteBootstrap { count: usize },
    /// Too many blocks hit the density floor.
    UnreliableDensity { floored_fraction: f64 },
}

impl Warning {
    pub(crate) fn emit(self) -> Self {
        log::warn!("{:?}", self);
        self
    }
}
