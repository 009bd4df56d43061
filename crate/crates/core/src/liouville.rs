//! Density transport under the unperturbed closed-loop flows.
//!
//! For `ẋ = A_j x` the density solves a Liouville equation whose solution is
//! `ρ(t, x) = ρ₀(e^{−A_j t} x) · e^{−tr(A_j) t}`. Gaussian initial densities
//! stay Gaussian and are handled in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDensity, Quadrature, TrapezoidGrid};
use crate::linalg::{cholesky, Matrix};
use crate::scalar::Real;
use crate::system::{closed_loop_matrix, matrix_exponential, FailureMode, GainSet, MultiChannelSystem};

/// Multivariate normal law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Real> GaussianDensity<T> {
    /// Rejects asymmetric (beyond `1e-12` relative) or non-PD covariances.
    pub fn new(mean: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() || mean.is_empty() {
            return Err(Error::Dimension(format!(
                "mean of length {} with a {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) || !cov.is_finite() {
            return Err(Error::Domain("Gaussian parameters must be finite".into()));
        }
        let scale = T::one().max(cov.max_abs());
        if !cov.is_symmetric(T::tol(1e-12) * scale) {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        let cov = cov.symmetrize();
        if cholesky(&cov).is_none() {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        Ok(Self { mean, cov })
    }

    /// Zero-mean law with covariance `cov`.
    pub fn centered(cov: Matrix<T>) -> Result<Self> {
        Self::new(vec![T::zero(); cov.nrows()], cov)
    }

    /// Standard normal in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![T::zero(); d],
            cov: Matrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Factors the covariance once for repeated evaluation.
    pub fn evaluator(&self) -> GaussianEval<T> {
        let chol = cholesky(&self.cov).expect("covariance checked PD at construction");
        let d = self.dim();
        let log_det_half: T = (0..d).map(|i| chol[(i, i)].ln()).sum();
        let two_pi = T::lit(2.0) * T::PI();
        GaussianEval {
            mean: self.mean.clone(),
            log_norm: -T::lit(0.5) * T::from_usize_lossy(d) * two_pi.ln() - log_det_half,
            chol,
        }
    }

    /// Natural log of the density at `x`.
    pub fn log_pdf(&self, x: &[T]) -> T {
        self.evaluator().log_pdf(x)
    }

    pub fn pdf(&self, x: &[T]) -> T {
        self.log_pdf(x).exp()
    }

    /// Per-axis standard deviations.
    pub fn std_devs(&self) -> Vec<T> {
        self.cov.diagonal().into_iter().map(|v| v.sqrt()).collect()
    }

    /// Box of `k` standard deviations around the mean, `points` nodes per axis.
    pub fn quadrature_box(&self, k: T, points: usize) -> Result<TrapezoidGrid<T>> {
        let sd = self.std_devs();
        let lo = self.mean.iter().zip(&sd).map(|(m, s)| *m - k * *s).collect();
        let hi = self.mean.iter().zip(&sd).map(|(m, s)| *m + k * *s).collect();
        TrapezoidGrid::new(lo, hi, vec![points; self.dim()])
    }
}

/// A Gaussian density with its covariance factored.
#[derive(Debug, Clone)]
pub struct GaussianEval<T> {
    mean: Vec<T>,
    chol: Matrix<T>,
    log_norm: T,
}

impl<T: Real> GaussianEval<T> {
    pub fn log_pdf(&self, x: &[T]) -> T {
        let d = self.mean.len();
        // forward solve L z = x − m
        let mut quad = T::zero();
        let mut z = [T::zero(); 8];
        let mut heap = Vec::new();
        let z: &mut [T] = if d <= 8 {
            &mut z[..d]
        } else {
            heap.resize(d, T::zero());
            &mut heap
        };
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s = s - self.chol[(i, j)] * z[j];
            }
            z[i] = s / self.chol[(i, i)];
            quad = quad + z[i] * z[i];
        }
        self.log_norm - T::lit(0.5) * quad
    }

    pub fn pdf(&self, x: &[T]) -> T {
        self.log_pdf(x).exp()
    }
}

/// Initial density `ρ₀` for the transport problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneralDensity<T> {
    Gaussian(GaussianDensity<T>),
    /// Piecewise constant on cells, zero outside the grid box.
    GridSampled(GridDensity<T>),
    /// Uniform on the closed box `[lo, hi]`.
    Uniform { lo: Vec<T>, hi: Vec<T> },
}

impl<T: Real> GeneralDensity<T> {
    pub fn uniform(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension("uniform box bounds disagree".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Domain("uniform box must have positive finite extent".into()));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::GridSampled(g) => g.grid.dim(),
            Self::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn value_at(&self, x: &[T]) -> T {
        match self {
            Self::Gaussian(g) => g.pdf(x),
            Self::GridSampled(g) => g.value_at(x),
            Self::Uniform { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (a, b))| v >= a && v <= b);
                if inside {
                    let vol = lo
                        .iter()
                        .zip(hi)
                        .fold(T::one(), |acc, (a, b)| acc * (*b - *a));
                    T::one() / vol
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Axis-aligned box that carries (essentially) all of the mass:
    /// `k` standard deviations for a Gaussian, the support otherwise.
    pub fn support_box(&self, k: T) -> (Vec<T>, Vec<T>) {
        match self {
            Self::Gaussian(g) => {
                let sd = g.std_devs();
                (
                    g.mean.iter().zip(&sd).map(|(m, s)| *m - k * *s).collect(),
                    g.mean.iter().zip(&sd).map(|(m, s)| *m + k * *s).collect(),
                )
            }
            Self::GridSampled(g) => (g.grid.lo.clone(), g.grid.hi.clone()),
            Self::Uniform { lo, hi } => (lo.clone(), hi.clone()),
        }
    }
}

/// Which trace enters the Jacobian factor of the transported density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianConvention {
    /// `e^{−tr(A_j) t}` with the closed-loop matrix of the mode; conserves mass.
    #[default]
    MassConserving,
    /// `e^{−tr(A) t}` with the open-loop drift, as a diagnostic. Loses or
    /// gains mass whenever `tr(Σ B_i K_i) ≠ 0`.
    OpenLoopTrace,
}

/// Precomputed flow of one failure mode at one time.
#[derive(Debug, Clone)]
pub struct ModeFlow<T> {
    /// `e^{A_j t}`.
    pub forward: Matrix<T>,
    /// `e^{−A_j t}`.
    pub backward: Matrix<T>,
    /// Multiplicative Jacobian factor applied to `ρ₀(e^{−A_j t} x)`.
    pub jacobian: T,
}

impl<T: Real> ModeFlow<T> {
    pub fn new(
        sys: &MultiChannelSystem<T>,
        gains: &GainSet<T>,
        mode: FailureMode,
        t: T,
        convention: JacobianConvention,
    ) -> Result<Self> {
        check_time(t)?;
        let acl = closed_loop_matrix(sys, gains, mode)?;
        let forward = matrix_exponential(&acl, t)?;
        let backward = matrix_exponential(&acl, -t)?;
        let trace = match convention {
            JacobianConvention::MassConserving => acl.trace(),
            JacobianConvention::OpenLoopTrace => sys.a().trace(),
        };
        Ok(Self {
            forward,
            backward,
            jacobian: (-trace * t).exp(),
        })
    }

    pub fn density_at(&self, rho0: &GeneralDensity<T>, x: &[T]) -> T {
        let pulled = self.backward.mul_vec(x);
        rho0.value_at(&pulled) * self.jacobian
    }

    /// Bounding box of the image of `[lo, hi]` under the forward flow.
    pub fn image_box(&self, lo: &[T], hi: &[T]) -> (Vec<T>, Vec<T>) {
        let d = lo.len();
        let mut out_lo = vec![T::infinity(); d];
        let mut out_hi = vec![T::neg_infinity(); d];
        for corner in 0..(1usize << d) {
            let x: Vec<T> = (0..d)
                .map(|k| if corner >> k & 1 == 1 { hi[k] } else { lo[k] })
                .collect();
            let y = self.forward.mul_vec(&x);
            for k in 0..d {
                out_lo[k] = out_lo[k].min(y[k]);
                out_hi[k] = out_hi[k].max(y[k]);
            }
        }
        (out_lo, out_hi)
    }
}

fn check_time<T: Real>(t: T) -> Result<()> {
    if t >= T::zero() && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be finite and nonnegative, got {t}")))
    }
}

fn check_dim<T: Real>(sys: &MultiChannelSystem<T>, d: usize) -> Result<()> {
    if d == sys.dim() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "density of dimension {d} for a system of dimension {}",
            sys.dim()
        )))
    }
}

/// Exact Gaussian pushforward `N(Φ m₀, Φ P₀ Φᵀ)` with `Φ = e^{A_j t}`.
pub fn pushforward_gaussian<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    g0: &GaussianDensity<T>,
    t: T,
) -> Result<GaussianDensity<T>> {
    check_time(t)?;
    check_dim(sys, g0.dim())?;
    let acl = closed_loop_matrix(sys, gains, mode)?;
    let phi = matrix_exponential(&acl, t)?;
    let mean = phi.mul_vec(&g0.mean);
    let cov = (&(&phi * &g0.cov) * &phi.transpose()).symmetrize();
    GaussianDensity::new(mean, cov)
        .map_err(|e| Error::Numerical(format!("pushforward covariance degenerated: {e}")))
}

/// `ρ⁽ʲ⁾(t, x)` with the mass-conserving Jacobian.
pub fn density_at<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    rho0: &GeneralDensity<T>,
    t: T,
    x: &[T],
) -> Result<T> {
    density_at_with(sys, gains, mode, rho0, t, x, JacobianConvention::MassConserving)
}

/// [`density_at`] with an explicit Jacobian convention.
pub fn density_at_with<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    rho0: &GeneralDensity<T>,
    t: T,
    x: &[T],
    convention: JacobianConvention,
) -> Result<T> {
    check_dim(sys, rho0.dim())?;
    check_dim(sys, x.len())?;
    Ok(ModeFlow::new(sys, gains, mode, t, convention)?.density_at(rho0, x))
}

/// Trapezoidal mass of `ρ⁽ʲ⁾(t, ·)` over `grid`, with the half-resolution
/// difference as error estimate.
pub fn integrate_density<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    rho0: &GeneralDensity<T>,
    t: T,
    grid: &TrapezoidGrid<T>,
) -> Result<Quadrature<T>> {
    integrate_density_with(sys, gains, mode, rho0, t, grid, JacobianConvention::MassConserving)
}

pub fn integrate_density_with<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    rho0: &GeneralDensity<T>,
    t: T,
    grid: &TrapezoidGrid<T>,
    convention: JacobianConvention,
) -> Result<Quadrature<T>> {
    check_dim(sys, rho0.dim())?;
    check_dim(sys, grid.dim())?;
    let flow = ModeFlow::new(sys, gains, mode, t, convention)?;
    Ok(grid.integrate(|x| flow.density_at(rho0, x)))
}

/// Mass of the transport of a Gaussian `ρ₀`, integrated in the whitened
/// coordinates `x = m + L z` of its pushforward law, `z ∈ [−k, k]^d`.
/// Unlike an axis-aligned box this resolves strongly anisotropic laws.
/// The integrand is the flow-transported density, so the Jacobian
/// convention shows up in the result.
#[allow(clippy::too_many_arguments)]
pub fn integrate_gaussian_transport<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    g0: &GaussianDensity<T>,
    t: T,
    k_sigma: T,
    points: usize,
    convention: JacobianConvention,
) -> Result<Quadrature<T>> {
    let law = pushforward_gaussian(sys, gains, mode, g0, t)?;
    let l = cholesky(&law.cov)
        .ok_or_else(|| Error::Numerical("pushforward covariance lost definiteness".into()))?;
    let d = law.dim();
    let det = (0..d).fold(T::one(), |acc, i| acc * l[(i, i)]);
    let flow = ModeFlow::new(sys, gains, mode, t, convention)?;
    let rho0 = GeneralDensity::Gaussian(g0.clone());
    let grid = TrapezoidGrid::new(vec![-k_sigma; d], vec![k_sigma; d], vec![points; d])?;
    Ok(grid.integrate(|z| {
        let lz = l.mul_vec(z);
        let x: Vec<T> = law.mean.iter().zip(&lz).map(|(m, v)| *m + *v).collect();
        flow.density_at(&rho0, &x) * det
    }))
}

/// Quadrature box for the transported density: `k_sigma` standard
/// deviations of the Gaussian pushforward, or the image of the support box.
pub fn default_box<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    rho0: &GeneralDensity<T>,
    t: T,
    k_sigma: T,
    points: usize,
) -> Result<TrapezoidGrid<T>> {
    match rho0 {
        GeneralDensity::Gaussian(g0) => {
            pushforward_gaussian(sys, gains, mode, g0, t)?.quadrature_box(k_sigma, points)
        }
        _ => {
            let flow = ModeFlow::new(sys, gains, mode, t, JacobianConvention::MassConserving)?;
            let (lo, hi) = rho0.support_box(k_sigma);
            let (lo, hi) = flow.image_box(&lo, &hi);
            TrapezoidGrid::new(lo, hi, vec![points; sys.dim()])
        }
    }
}
