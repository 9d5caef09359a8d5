use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("evaluation point lies within {dist:e} of the bubble center")]
    CenterSingular { dist: f64 },
    #[error("mesh has {nodes} nodes, at least {required} are needed")]
    MeshTooCoarse { nodes: usize, required: usize },
    #[error("field is not tangent to the bubble: max |phi . W| = {max_dot:e}")]
    TangencyViolated { max_dot: f64 },
    #[error("bubble list does not match ansatz configuration: {0}")]
    ConfigMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{fraction:.4} of the energy lies above the mode cutoff")]
    AliasWarning { fraction: f64 },

    #[error("quadrature did not converge: error estimate {estimate:e} > tolerance {tolerance:e}")]
    QuadratureNotConverged { estimate: f64, tolerance: f64 },
    #[error("sign condition violated: value {value} must be negative")]
    SignConditionViolated { value: f64 },
    #[error("fixed point iteration stalled after {sweeps} sweeps (max residual {max_residual:e})")]
    NoConvergence {
        sweeps: usize,
        max_residual: f64,
        residual_profile: Vec<f64>,
    },
    #[error("growth bound violated by a factor {ratio:.3}")]
    GrowthViolation { ratio: f64 },

    #[error("logarithmic kernel evaluated at the origin")]
    OriginSingular,
    #[error("forcing carries {flux:e} of its mass through the box edge")]
    DomainTooSmall { flux: f64 },
    #[error("grid too coarse: {detail}")]
    GridResolutionTooCoarse { detail: String },

    #[error("boundary parity defect {defect:e} exceeds tolerance")]
    ParityViolation { defect: f64 },
    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("resolution exhausted at t = {t:e}: max |grad u| = {grad_max:e}")]
    BlowupDetected { t: f64, grad_max: f64 },
    #[error("no energy concentration found in the search window")]
    NoPeak,

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("suite {suite} failed {failed} check(s)")]
    SuiteFailure { suite: String, failed: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
