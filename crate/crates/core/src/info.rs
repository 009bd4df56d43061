//! Differential entropy and relative entropy, in bits.
//!
//! Closed forms are evaluated in nats and converted once.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::linalg::{cholesky, Lu, Matrix};
use crate::liouville::GaussianDensity;
use crate::scalar::Real;

/// Cells below this value count as empty.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// An information quantity in bits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bits<T>(pub T);

impl<T: Real> Bits<T> {
    pub fn from_nats(nats: T) -> Self {
        Self(nats * T::LOG2_E())
    }

    pub fn value(self) -> T {
        self.0
    }
}

impl<T: fmt::Display> fmt::Display for Bits<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bits", self.0)
    }
}

/// A relative entropy that may be infinite when absolute continuity fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Divergence<T> {
    Finite(Bits<T>),
    /// `support_violations` counts cells with `q > floor` and `p <= floor`.
    Infinite { support_violations: usize },
}

impl<T: Real> Divergence<T> {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    pub fn finite(&self) -> Option<T> {
        match self {
            Self::Finite(b) => Some(b.0),
            Self::Infinite { .. } => None,
        }
    }

    /// The value in bits, `+∞` for the infinite case.
    pub fn bits(&self) -> T {
        self.finite().unwrap_or_else(T::infinity)
    }

    /// Unwraps a finite value.
    ///
    /// # Panics
    /// Panics on the infinite sentinel.
    pub fn expect_finite(&self) -> T {
        match self {
            Self::Finite(b) => b.0,
            Self::Infinite { support_violations } => {
                panic!("divergence is infinite ({support_violations} support violations)")
            }
        }
    }
}

fn log_det_pd<T: Real>(cov: &Matrix<T>) -> Result<T> {
    let l = cholesky(cov).ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?;
    Ok((0..cov.nrows()).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0))
}

/// `½ log₂((2πe)^d det Σ)`.
pub fn gaussian_entropy<T: Real>(g: &GaussianDensity<T>) -> Result<Bits<T>> {
    let d = T::from_usize_lossy(g.dim());
    let two_pi_e = T::lit(2.0) * T::PI() * T::E();
    let nats = T::lit(0.5) * (d * two_pi_e.ln() + log_det_pd(&g.cov)?);
    Ok(Bits::from_nats(nats))
}

/// `D(q ‖ p)` for Gaussians.
pub fn gaussian_kl<T: Real>(q: &GaussianDensity<T>, p: &GaussianDensity<T>) -> Result<Bits<T>> {
    if q.dim() != p.dim() {
        return Err(Error::Dimension(format!(
            "relative entropy between dimensions {} and {}",
            q.dim(),
            p.dim()
        )));
    }
    let d = q.dim();
    let lu = Lu::factor(&p.cov)?;
    let pinv_q = lu.solve_matrix(&q.cov);
    let diff: Vec<T> = q.mean.iter().zip(&p.mean).map(|(a, b)| *a - *b).collect();
    let w = lu.solve(&diff);
    let maha: T = diff.iter().zip(&w).map(|(a, b)| *a * *b).sum();
    let nats = T::lit(0.5)
        * (pinv_q.trace() - T::from_usize_lossy(d) + maha + log_det_pd(&p.cov)? - log_det_pd(&q.cov)?);
    // Rounding can leave a tiny negative value for equal arguments.
    Ok(Bits::from_nats(nats.max(T::zero())))
}

/// `−Σ ρ log₂ ρ · vol`, with `0 log 0 = 0` below the density floor.
pub fn grid_entropy<T: Real>(rho: &GridDensity<T>) -> Bits<T> {
    let floor = T::lit(DENSITY_FLOOR);
    let vol = rho.grid.cell_volume();
    let nats: T = rho
        .values
        .iter()
        .filter(|v| **v > floor)
        .map(|v| -*v * v.ln())
        .sum::<T>()
        * vol;
    Bits::from_nats(nats)
}

/// `Σ q log₂(q/p) · vol` on a shared grid; infinite when `q` has mass where
/// `p` has none.
pub fn grid_kl<T: Real>(q: &GridDensity<T>, p: &GridDensity<T>) -> Result<Divergence<T>> {
    if !q.grid.same_as(&p.grid) {
        return Err(Error::GridMismatch);
    }
    let floor = T::lit(DENSITY_FLOOR);
    let mut violations = 0;
    let mut nats = T::zero();
    for (qc, pc) in q.values.iter().zip(&p.values) {
        if *qc <= floor {
            continue;
        }
        if *pc <= floor {
            violations += 1;
            continue;
        }
        nats = nats + *qc * (*qc / *pc).ln();
    }
    if violations > 0 {
        return Ok(Divergence::Infinite {
            support_violations: violations,
        });
    }
    let nats = nats * q.grid.cell_volume();
    Ok(Divergence::Finite(Bits::from_nats(nats.max(T::zero()))))
}
