use thiserror::Error;

/// Errors raised by the evaluation, integration and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KurthError {
    #[error("position has zero radius; spherical variables are undefined")]
    ZeroRadius,
    #[error("r = 0 with beta = {beta} > 0 (centrifugal singularity)")]
    CentrifugalSingularity { beta: f64 },
    #[error("phase-space point is not strictly inside the support (F = {support})")]
    OutsideSupport { support: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("epsilon = {epsilon} gives an unbound scale factor; no period exists")]
    Aperiodic { epsilon: f64 },
    #[error("no period could be detected on [0, {t_end}]")]
    NoPeriodDetected { t_end: f64 },
    #[error("scale factor integration failed at t = {t_last}")]
    Collapse { t_last: f64 },
    #[error("time {t} outside the integrated range [{t_start}, {t_end}]")]
    OutOfRange { t: f64, t_start: f64, t_end: f64 },
    #[error("singular configuration: {0}")]
    Singular(String),
    #[error("invalid radial grid: {0}")]
    InvalidGrid(String),
    #[error("negative density {value} in bin {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("ensemble must contain at least one particle")]
    EmptyEnsemble,
    #[error("all mass collapsed into the innermost cell at t = {t}")]
    MassCollapse { t: f64 },
}

pub type Result<T> = std::result::Result<T, KurthError>;
