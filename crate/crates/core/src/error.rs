use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration diverged at t = {time}")]
    IntegrationDivergence { time: f64 },

    #[error("quadrature needs at least 2 substeps, segment has {substeps}")]
    QuadratureResolution { substeps: usize },

    #[error("certification infeasible: {0}")]
    CertificationInfeasible(String),

    #[error("gain is not strongly stable at h = {h}: {reason}")]
    NotStronglyStable { h: f64, reason: String },

    #[error("gain synthesis failed: {0}")]
    Synthesis(String),

    #[error("infeasible schedule: window l = {l} exceeds sample count n = {n}; {suggestion}")]
    InfeasibleSchedule {
        l: usize,
        n: usize,
        suggestion: String,
    },

    #[error("gain certificate does not cover h = {h}: {reason}")]
    CertificationMismatch { h: f64, reason: String },

    #[error("non-finite gradient at slow step {k}")]
    NonFiniteGradient { k: usize },

    #[error("runs are not comparable: disturbance replay {expected} vs {found}")]
    IncomparableRuns { expected: String, found: String },

    #[error("no certifiable candidate gain in the class (kappa = {kappa}, gamma = {gamma})")]
    EmptyClass { kappa: f64, gamma: f64 },

    #[error("comparator block {index} has norm {norm:.6e} above class bound {bound:.6e}")]
    ComparatorOutOfClass { index: usize, norm: f64, bound: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Process exit status for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::IntegrationDivergence { .. } => 3,
            Error::InfeasibleSchedule { .. } => 4,
            _ => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
