use thiserror::Error;

use crate::dynamics::PhaseState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("projection size {requested} exceeds basis size {available}")]
    OutOfRange { requested: usize, available: usize },

    #[error("growth exponent {0} is outside [1, 2)")]
    GrowthOutOfRange(f64),

    #[error("nonlinearity is not dissipative: {0}")]
    NotDissipative(String),

    #[error("derivative of the nonlinearity is unbounded above")]
    UnboundedDerivative,

    #[error("bound fit failed: {0}")]
    BoundFitFailed(String),

    #[error("mode {index} is not forced but lies below the low-mode threshold")]
    DegenerateLowMode { index: usize },

    #[error("no eigenvalue in the truncation exceeds {a_phi}; add modes")]
    InsufficientModes { a_phi: f64 },

    #[error("noise trace {name} diverges in the continuum limit")]
    TraceDivergent { name: &'static str },

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("time step and horizon must satisfy 0 < h <= T (got h = {step}, T = {horizon})")]
    InvalidStep { step: f64, horizon: f64 },

    #[error("mass must be non-negative and finite (got {0})")]
    InvalidMass(f64),

    #[error("non-finite state at step {step} (t = {time})")]
    BlowUp {
        step: usize,
        time: f64,
        last_finite: Box<PhaseState>,
    },

    #[error("this operation requires a positive mass")]
    ZeroMass,

    #[error("base trajectory must be recorded at every step (stride {stride})")]
    RecordStrideTooCoarse { stride: usize },

    #[error("unsupported functional: {0}")]
    UnsupportedFunctional(String),

    #[error("exponential weight overflows (log value {log_value:.3e})")]
    Overflow { log_value: f64 },

    #[error("empirical measures must have equal sizes ({left} vs {right})")]
    EmpiricalSizeMismatch { left: usize, right: usize },

    #[error("empirical measure size {size} exceeds the exact-assignment limit {limit}")]
    SizeExceeded { size: usize, limit: usize },

    #[error("observable has zero certified Lipschitz constant")]
    ZeroLipschitz,

    #[error("observable has no certified Lipschitz bound")]
    UncertifiedObservable,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown probe '{0}'")]
    UnknownProbe(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
