use thiserror::Error;

use crate::spectral::Rank;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid {dims:?}: every axis needs an even number of points >= 4")]
    InvalidGrid { dims: [usize; 3] },

    #[error("fields live on different grids ({left:?} vs {right:?})")]
    GridMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("rank mismatch: expected {expected:?}, found {found:?}")]
    RankMismatch { expected: Rank, found: Rank },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kmax = {kmax} must stay below n/3 on every axis (limit {limit})")]
    KmaxTooLarge { kmax: usize, limit: usize },

    #[error("field mean must vanish, found {value:e}")]
    NonZeroMean { value: f64 },

    #[error("tensor is not symmetric (defect {defect:e})")]
    Asymmetric { defect: f64 },

    #[error("CFL violated: dt = {dt:e}, max|Ju| = {max_speed:e}; use dt <= {required_dt:e}")]
    Cfl { dt: f64, max_speed: f64, required_dt: f64 },

    #[error("non-finite value at t = {t}; state left at last finite step")]
    NonFinite { t: f64 },

    #[error("deformation determinant drifted by {defect:e} (limit {limit:e}): flow under-resolved")]
    DeterminantDrift { defect: f64, limit: f64 },

    #[error("time mismatch: {left} vs {right}")]
    TimeMismatch { left: f64, right: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("study: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
