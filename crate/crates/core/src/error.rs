use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Payloads are stored as `f64` so the type is shared by every scalar
/// instantiation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },

    #[error("unsupported diffusion: {0}")]
    UnsupportedDiffusion(String),

    #[error("trajectory {path} diverged (|x| > 1e12)")]
    Divergence { path: usize },

    #[error("{leakage:.4} of the samples fall outside the box (limit 0.10)")]
    OutOfBox { leakage: f64 },

    #[error("stationary density is not unique: {zero_pivots} near-zero pivots")]
    NonUnique { zero_pivots: usize },

    #[error("grids do not match")]
    GridMismatch,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gain set is not reliable (spectral abscissae {abscissae:?})")]
    NotReliable { abscissae: Vec<f64> },

    #[error(
        "no reliable gain set found up to theta = {theta_max} (best margin {best_margin:e} at theta = {best_theta}); no certificate of impossibility"
    )]
    SynthesisFailed {
        theta_max: f64,
        best_theta: f64,
        best_margin: f64,
        best_abscissae: Vec<f64>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
