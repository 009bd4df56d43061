//! Membership test for the single-failure-tolerant gain class and a
//! Riccati-based synthesis heuristic for finding a member.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Lu, Matrix};
use crate::scalar::Real;
use crate::system::{
    closed_loop_matrix, solve_lyapunov, spectral_abscissa, GainSet,
    MultiChannelSystem,
};

/// Spectral abscissae of the nominal loop (index 0) and every single-outage loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport<T> {
    pub abscissae: Vec<T>,
    pub margin: T,
    pub reliable: bool,
}

/// Decides whether `gains` keeps the loop Hurwitz nominally and under every
/// single-channel outage. Strict inequality, no slack.
pub fn verify_reliable<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
) -> Result<ReliabilityReport<T>> {
    sys.check_gains(gains)?;
    let abscissae = sys
        .modes()
        .map(|mode| spectral_abscissa(&closed_loop_matrix(sys, gains, mode)?))
        .collect::<Result<Vec<T>>>()?;
    let worst = abscissae.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    Ok(ReliabilityReport {
        margin: -worst,
        reliable: abscissae.iter().all(|a| *a < T::zero()),
        abscissae,
    })
}

/// Returns an error unless `gains` is reliable for `sys`.
pub fn require_reliable<T: Real>(sys: &MultiChannelSystem<T>, gains: &GainSet<T>) -> Result<()> {
    let report = verify_reliable(sys, gains)?;
    if report.reliable {
        Ok(())
    } else {
        Err(Error::NotReliable {
            abscissae: report.abscissae.iter().map(|v| v.to_f64_lossy()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions<T> {
    /// State weight; identity when `None`.
    pub q_weight: Option<Matrix<T>>,
    /// Per-channel input weights; identities when `None`.
    pub r_weights: Option<Vec<Matrix<T>>>,
    pub theta_max: T,
    pub margin_floor: T,
}

impl<T: Real> Default for SynthesisOptions<T> {
    fn default() -> Self {
        Self {
            q_weight: None,
            r_weights: None,
            theta_max: T::lit(1024.0),
            margin_floor: T::lit(1e-6),
        }
    }
}

/// A reliable gain set together with the gain scale that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis<T> {
    pub gains: GainSet<T>,
    pub theta: T,
    pub report: ReliabilityReport<T>,
}

/// Scans `θ = 1, 2, 4, …, θ_max`; for each, solves the LQR Riccati equation
/// with input weight `blockdiag(R_i)/θ` and keeps `K_i = −θ R_i⁻¹ B_iᵀ P`.
/// The first θ whose gains pass [`verify_reliable`] with margin at least
/// `margin_floor` wins.
pub fn synthesize_gains<T: Real>(
    sys: &MultiChannelSystem<T>,
    opts: &SynthesisOptions<T>,
) -> Result<Synthesis<T>> {
    let d = sys.dim();
    let q = opts.q_weight.clone().unwrap_or_else(|| Matrix::identity(d));
    let r_blocks: Vec<Matrix<T>> = match &opts.r_weights {
        Some(r) => r.clone(),
        None => sys.b().iter().map(|b| Matrix::identity(b.ncols())).collect(),
    };
    validate_weights(sys, &q, &r_blocks, opts)?;

    let r_inv: Vec<Matrix<T>> = r_blocks
        .iter()
        .map(|r| Lu::factor(r).map(|lu| lu.inverse()))
        .collect::<Result<_>>()?;
    // G(θ) = Σ B_i (θ R_i⁻¹) B_iᵀ
    let g1 = sys
        .b()
        .iter()
        .zip(&r_inv)
        .fold(Matrix::zeros(d, d), |acc, (b, ri)| {
            &acc + &(&(b * ri) * &b.transpose())
        });

    let mut best: Option<(T, ReliabilityReport<T>)> = None;
    let mut theta = T::one();
    while theta <= opts.theta_max {
        let g = g1.scale(theta);
        let p = solve_care(sys.a(), &g, &q)?;
        let k: Vec<Matrix<T>> = sys
            .b()
            .iter()
            .zip(&r_inv)
            .map(|(b, ri)| (&(ri * &b.transpose()) * &p).scale(-theta))
            .collect();
        let gains = GainSet::new(k);
        let report = verify_reliable(sys, &gains)?;
        if report.reliable && report.margin >= opts.margin_floor {
            return Ok(Synthesis {
                gains,
                theta,
                report,
            });
        }
        if best.as_ref().is_none_or(|(_, b)| report.margin > b.margin) {
            best = Some((theta, report));
        }
        theta = theta * T::lit(2.0);
    }
    let (best_theta, best_report) = best.expect("theta_max >= 1 gives at least one candidate");
    Err(Error::SynthesisFailed {
        theta_max: opts.theta_max.to_f64_lossy(),
        best_theta: best_theta.to_f64_lossy(),
        best_margin: best_report.margin.to_f64_lossy(),
        best_abscissae: best_report.abscissae.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

fn validate_weights<T: Real>(
    sys: &MultiChannelSystem<T>,
    q: &Matrix<T>,
    r: &[Matrix<T>],
    opts: &SynthesisOptions<T>,
) -> Result<()> {
    let d = sys.dim();
    if q.shape() != (d, d) {
        return Err(Error::Dimension(format!("Q weight must be {d}x{d}")));
    }
    if !q.is_symmetric(T::tol(1e-12) * (T::one() + q.max_abs())) || cholesky(q).is_none() {
        return Err(Error::Domain("Q weight must be symmetric positive definite".into()));
    }
    if r.len() != sys.channels() {
        return Err(Error::Dimension(format!(
            "{} R weights for {} channels",
            r.len(),
            sys.channels()
        )));
    }
    for (i, (ri, bi)) in r.iter().zip(sys.b()).enumerate() {
        let ri_dim = bi.ncols();
        if ri.shape() != (ri_dim, ri_dim) {
            return Err(Error::Dimension(format!("R_{} must be {ri_dim}x{ri_dim}", i + 1)));
        }
        if !ri.is_symmetric(T::tol(1e-12) * (T::one() + ri.max_abs())) || cholesky(ri).is_none() {
            return Err(Error::Domain(format!(
                "R_{} must be symmetric positive definite",
                i + 1
            )));
        }
    }
    if !(opts.theta_max >= T::one()) {
        return Err(Error::Domain("theta_max must be at least 1".into()));
    }
    if !(opts.margin_floor >= T::zero()) {
        return Err(Error::Domain("margin_floor must be nonnegative".into()));
    }
    Ok(())
}

const NEWTON_MAX_ITERS: usize = 200;

/// Stabilizing solution of `AᵀP + PA − P G P + Q = 0` (`G = B R⁻¹ Bᵀ`) by
/// Newton–Kleinman iteration started from a Bass-type stabilizing gain.
pub fn solve_care<T: Real>(a: &Matrix<T>, g: &Matrix<T>, q: &Matrix<T>) -> Result<Matrix<T>> {
    let mut pk = initial_riccati_iterate(a, g)?;
    let mut last = T::infinity();
    for _ in 0..NEWTON_MAX_ITERS {
        let acl = a - &(g * &pk);
        let rhs = (q + &(&(&pk * g) * &pk)).symmetrize();
        let p = solve_lyapunov(&acl.transpose(), &rhs)
            .map_err(|e| Error::Numerical(format!("Newton–Kleinman step failed: {e}")))?;
        let residual = care_residual(a, g, q, &p);
        let scale = T::one()
            + q.frobenius_norm()
            + T::lit(2.0) * a.frobenius_norm() * p.frobenius_norm()
            + (&(&p * g) * &p).frobenius_norm();
        if residual <= T::tol(1e-9) * scale {
            // One more step is cheap and, with quadratic convergence, usually
            // lands at rounding level.
            return Ok(polish_care(a, g, q, p, residual));
        }
        if !residual.is_finite() {
            break;
        }
        last = residual;
        pk = p;
    }
    Err(Error::Numerical(format!(
        "Riccati iteration did not converge (last residual {:e})",
        last.to_f64_lossy()
    )))
}

fn polish_care<T: Real>(a: &Matrix<T>, g: &Matrix<T>, q: &Matrix<T>, p: Matrix<T>, residual: T) -> Matrix<T> {
    let acl = a - &(g * &p);
    let rhs = (q + &(&(&p * g) * &p)).symmetrize();
    match solve_lyapunov(&acl.transpose(), &rhs) {
        Ok(next) if care_residual(a, g, q, &next) < residual => next,
        _ => p,
    }
}

/// `‖AᵀP + PA − P G P + Q‖_F`.
pub fn care_residual<T: Real>(a: &Matrix<T>, g: &Matrix<T>, q: &Matrix<T>, p: &Matrix<T>) -> T {
    let atp = &a.transpose() * p;
    let pa = p * a;
    let pgp = &(p * g) * p;
    (&(&(&atp + &pa) - &pgp) + q).frobenius_norm()
}

// Bass: with β > ‖A‖ the matrix −(A + βI) is Hurwitz; the solution Z of
// (A + βI) Z + Z (A + βI)ᵀ = 2G is PD for a controllable pair and
// A − G Z⁻¹ is Hurwitz with Lyapunov matrix Z⁻¹.
fn initial_riccati_iterate<T: Real>(a: &Matrix<T>, g: &Matrix<T>) -> Result<Matrix<T>> {
    let d = a.nrows();
    let beta = a.frobenius_norm() + T::one();
    let shifted = (a + &Matrix::identity(d).scale(beta)).scale(-T::one());
    let z = solve_lyapunov(&shifted, &g.scale(T::lit(2.0)))?;
    let z_scale = T::one().max(z.max_abs());
    let controllable = cholesky(&z).is_some()
        && Lu::factor(&z).map(|lu| lu.determinant().abs() > T::tol(1e-13) * z_scale.powi(d as i32)).unwrap_or(false);
    if controllable {
        return Ok(Lu::factor(&z)?.inverse().symmetrize());
    }
    if spectral_abscissa(a)? < T::zero() {
        return Ok(Matrix::zeros(d, d));
    }
    Err(Error::Numerical(
        "no stabilizing initial gain: the stacked input pair is not controllable".into(),
    ))
}
