//! Stationary laws of the perturbed closed loops
//! `dx = A_j x dt + ε σ(x) dW`.
//!
//! Three routes: the exact Gaussian law for constant σ, Euler–Maruyama
//! sampling for any σ, and a grid solver for the stationary Fokker–Planck
//! equation in one or two dimensions.

mod fokker_planck;
mod sde;

pub use fokker_planck::{fp_residual, solve_stationary_fp_grid, FpDensity};
pub use sde::{
    default_dt, default_horizon, empirical_density, histogram, simulate_sde, simulate_sde_from,
    Histogram, SampleSet, DIVERGENCE_BOUND, MAX_LEAKAGE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg::Matrix;
use crate::liouville::GaussianDensity;
use crate::scalar::Real;
use crate::system::{
    closed_loop_matrix, solve_lyapunov, spectral_abscissa, DiffusionSpec, FailureMode, GainSet,
    MultiChannelSystem,
};

/// Noise level `ε > 0` multiplying the system's diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation<T> {
    epsilon: T,
}

impl<T: Real> Perturbation<T> {
    pub fn new(epsilon: T) -> Result<Self> {
        if epsilon > T::zero() && epsilon.is_finite() {
            Ok(Self { epsilon })
        } else {
            Err(Error::Domain(format!("epsilon must be positive and finite, got {epsilon}")))
        }
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }
}

/// `N(0, P)` with `A_j P + P A_jᵀ + ε² S Sᵀ = 0`.
pub fn stationary_gaussian<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
) -> Result<GaussianDensity<T>> {
    let eps = Perturbation::new(eps)?.epsilon();
    let s = match sys.sigma() {
        DiffusionSpec::Constant { s, .. } => s,
        DiffusionSpec::DiagAffine { .. } => {
            return Err(Error::UnsupportedDiffusion(
                "state-dependent diffusion has no closed-form stationary law; use the monte_carlo or grid method"
                    .into(),
            ))
        }
    };
    let acl = closed_loop_matrix(sys, gains, mode)?;
    let q = (s * &s.transpose()).scale(eps * eps);
    let p = solve_lyapunov(&acl, &q)?;
    GaussianDensity::centered(p)
        .map_err(|e| Error::Numerical(format!("stationary covariance is not PD: {e}")))
}

/// Per-axis standard deviations used to size boxes. Exact for constant σ;
/// for diag-affine σ the noise is frozen at two standard deviations from the
/// origin and the estimate iterated to a fixed point.
pub fn stationary_scale<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
) -> Result<Vec<T>> {
    let acl = closed_loop_matrix(sys, gains, mode)?;
    let abscissa = spectral_abscissa(&acl)?;
    if !(abscissa < T::zero()) {
        return Err(Error::NotHurwitz {
            abscissa: abscissa.to_f64_lossy(),
        });
    }
    match sys.sigma() {
        DiffusionSpec::Constant { .. } => {
            Ok(stationary_gaussian(sys, gains, mode, eps)?.std_devs())
        }
        DiffusionSpec::DiagAffine { c, s, .. } => {
            let mut sd = vec![T::zero(); c.len()];
            for _ in 0..8 {
                let diag: Vec<T> = (0..c.len())
                    .map(|i| {
                        let v = eps * (c[i] + s[i] * T::lit(2.0) * sd[i]);
                        v * v
                    })
                    .collect();
                let p = solve_lyapunov(&acl, &Matrix::from_diagonal(&diag))?;
                sd = p.diagonal().into_iter().map(|v| v.sqrt()).collect();
            }
            if sd.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("stationary scale estimate diverged".into()));
            }
            Ok(sd)
        }
    }
}

/// Cell-centred box of `±k` stationary standard deviations around the
/// origin, `cells` cells per axis.
pub fn default_fp_box<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
    k: T,
    cells: usize,
) -> Result<GridSpec<T>> {
    let sd = stationary_scale(sys, gains, mode, eps)?;
    let largest = sd.iter().fold(T::zero(), |m, v| m.max(*v));
    let d = sd.len();
    GridSpec::uniform(vec![-k * largest; d], vec![k * largest; d], cells)
}
