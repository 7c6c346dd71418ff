use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside the divergence domain (coordinate {index}, value {value})")]
    DomainViolation { index: usize, value: f64 },

    #[error("second argument not strictly interior (coordinate {index}, value {value})")]
    InteriorViolation { index: usize, value: f64 },

    #[error("Bregman evaluation went negative beyond round-off: {0}")]
    NumericalInconsistency(f64),

    #[error("separable components mix full and relative-interior domains")]
    MixedDomainTypes,

    #[error("weight must be positive, got w({t}) = {value}")]
    NonpositiveWeight { t: f64, value: f64 },

    #[error("expectation lies on the domain boundary (coordinate {index}, value {value})")]
    MeanOnBoundary { index: usize, value: f64 },

    #[error("time-scaled divergence evaluated without a time argument")]
    TimeRequired,

    #[error("reweighting mass is zero or negligible: K = {0}")]
    ZeroMass(f64),

    #[error("weight function exceeds the overflow guard: sup w = {0}")]
    UnboundedWeight(f64),

    #[error("singular time t = {0}")]
    SingularTime(f64),

    #[error("accumulated variance is zero at t = {0}")]
    ZeroVariance(f64),

    #[error("total jump rate is zero")]
    ZeroRate,

    #[error("invalid scheduler: {0}")]
    SchedulerInvalid(String),

    #[error("hazard must be positive, got {0}")]
    NonpositiveHazard(f64),

    #[error("internal loss scaling must be positive, got {name}({t}) = {value}")]
    NonpositiveScaling { name: &'static str, t: f64, value: f64 },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("trajectory {0} diverged (non-finite state)")]
    TrajectoryDiverged(usize),

    #[error("thinning rate bound exceeded repeatedly at t = {t}")]
    RateBoundExceeded { t: f64 },

    #[error("distributions have incompatible supports: {0}")]
    SupportMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
