//! Plant and gain data model, plus the dense kernels every other module uses:
//! closed-loop assembly, spectral abscissa, matrix exponential and the
//! continuous Lyapunov solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, expm, symmetric_eigenvalues, Lu, Matrix};
use crate::scalar::{Real, Scalar};

/// Smallest admissible ellipticity constant for a constant diffusion.
pub const MIN_KAPPA: f64 = 1e-12;

/// `v - v == 0` holds exactly for finite floats and for every exact type.
fn is_finite_value<T: Scalar>(v: &T) -> bool {
    v.clone() - v.clone() == T::zero()
}

/// Noise input map `σ(x)` of the perturbed closed loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionSpec<T> {
    /// `σ(x) = S`, a constant `d×m` matrix.
    Constant { s: Matrix<T>, kappa: T },
    /// `σ(x) = diag(c_i + s_i |x_i|)`.
    DiagAffine { c: Vec<T>, s: Vec<T>, kappa: T },
}

impl<T: Real> DiffusionSpec<T> {
    /// Constant diffusion; rejects `S Sᵀ` with least eigenvalue `<= 1e-12`.
    pub fn constant(s: Matrix<T>) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::Domain("diffusion matrix has non-finite entries".into()));
        }
        let sst = &s * &s.transpose();
        let kappa = symmetric_eigenvalues(&sst)?
            .first()
            .copied()
            .unwrap_or_else(T::zero);
        if !(kappa > T::lit(MIN_KAPPA)) {
            return Err(Error::Domain(format!(
                "S Sᵀ is not uniformly elliptic (least eigenvalue {kappa})"
            )));
        }
        Ok(Self::Constant { s, kappa })
    }

    /// `σ(x)` evaluated at a point.
    pub fn sigma_at(&self, x: &[T]) -> Matrix<T> {
        match self {
            Self::Constant { s, .. } => s.clone(),
            Self::DiagAffine { c, s, .. } => {
                let diag: Vec<T> = c
                    .iter()
                    .zip(s)
                    .zip(x)
                    .map(|((ci, si), xi)| *ci + *si * xi.abs())
                    .collect();
                Matrix::from_diagonal(&diag)
            }
        }
    }

    /// `σ(x) σ(x)ᵀ`.
    pub fn diffusion_at(&self, x: &[T]) -> Matrix<T> {
        let sig = self.sigma_at(x);
        &sig * &sig.transpose()
    }
}

impl<T: Scalar> DiffusionSpec<T> {
    /// Diagonal affine diffusion; needs every `c_i > 0` and `s_i >= 0`.
    pub fn diag_affine(c: Vec<T>, s: Vec<T>) -> Result<Self> {
        if c.len() != s.len() || c.is_empty() {
            return Err(Error::Dimension(format!(
                "diag-affine diffusion: c has {} entries, s has {}",
                c.len(),
                s.len()
            )));
        }
        if c.iter().any(|v| !(v.clone() > T::zero()) || !is_finite_value(v)) {
            return Err(Error::Domain("diag-affine diffusion needs every c_i > 0".into()));
        }
        if s.iter().any(|v| v.clone() < T::zero() || !is_finite_value(v)) {
            return Err(Error::Domain("diag-affine diffusion needs every s_i >= 0".into()));
        }
        let cmin = c
            .iter()
            .skip(1)
            .fold(c[0].clone(), |m, v| if v.clone() < m { v.clone() } else { m });
        let kappa = cmin.clone() * cmin;
        Ok(Self::DiagAffine { c, s, kappa })
    }

    /// State dimension the diffusion acts on.
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { s, .. } => s.nrows(),
            Self::DiagAffine { c, .. } => c.len(),
        }
    }

    /// Noise dimension `m`.
    pub fn noise_dim(&self) -> usize {
        match self {
            Self::Constant { s, .. } => s.ncols(),
            Self::DiagAffine { c, .. } => c.len(),
        }
    }

    pub fn kappa(&self) -> &T {
        match self {
            Self::Constant { kappa, .. } | Self::DiagAffine { kappa, .. } => kappa,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }
}

/// `ẋ = A x + Σ B_i u_i` with a diffusion model for its perturbation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiChannelSystem<T> {
    a: Matrix<T>,
    b: Vec<Matrix<T>>,
    sigma: DiffusionSpec<T>,
}

impl<T: Scalar> MultiChannelSystem<T> {
    pub fn new(a: Matrix<T>, b: Vec<Matrix<T>>, sigma: DiffusionSpec<T>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let d = a.nrows();
        if b.is_empty() {
            return Err(Error::Dimension("at least one input channel is required".into()));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.nrows() != d {
                return Err(Error::Dimension(format!(
                    "B_{} has {} rows, expected {d}",
                    i + 1,
                    bi.nrows()
                )));
            }
        }
        if sigma.dim() != d {
            return Err(Error::Dimension(format!(
                "diffusion acts on dimension {}, expected {d}",
                sigma.dim()
            )));
        }
        if !a.as_slice().iter().all(is_finite_value) {
            return Err(Error::Domain("A has non-finite entries".into()));
        }
        Ok(Self { a, b, sigma })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn channels(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &[Matrix<T>] {
        &self.b
    }

    pub fn sigma(&self) -> &DiffusionSpec<T> {
        &self.sigma
    }

    /// Checks that `gains` has one `r_i×d` block per channel.
    pub fn check_gains(&self, gains: &GainSet<T>) -> Result<()> {
        if gains.k.len() != self.channels() {
            return Err(Error::Dimension(format!(
                "{} gains for {} channels",
                gains.k.len(),
                self.channels()
            )));
        }
        for (i, (ki, bi)) in gains.k.iter().zip(&self.b).enumerate() {
            if ki.ncols() != self.dim() || ki.nrows() != bi.ncols() {
                return Err(Error::Dimension(format!(
                    "K_{} is {}x{}, expected {}x{}",
                    i + 1,
                    ki.nrows(),
                    ki.ncols(),
                    bi.ncols(),
                    self.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn check_mode(&self, mode: FailureMode) -> Result<()> {
        if mode.0 > self.channels() {
            return Err(Error::InvalidInput(format!(
                "failure mode {} out of range 0..={}",
                mode.0,
                self.channels()
            )));
        }
        Ok(())
    }

    /// Every failure mode, nominal first.
    pub fn modes(&self) -> impl Iterator<Item = FailureMode> {
        (0..=self.channels()).map(FailureMode)
    }

    /// Same plant with channels reordered: channel `k` of the result is
    /// channel `perm[k]` of `self`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        let b = permuted(&self.b, perm)?;
        Ok(Self {
            a: self.a.clone(),
            b,
            sigma: self.sigma.clone(),
        })
    }
}

fn permuted<X: Clone>(items: &[X], perm: &[usize]) -> Result<Vec<X>> {
    let mut seen = vec![false; items.len()];
    if perm.len() != items.len() || perm.iter().any(|&p| p >= items.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidInput("not a permutation of the channels".into()));
    }
    Ok(perm.iter().map(|&p| items[p].clone()).collect())
}

/// State-feedback gains `K_1 … K_N`, `u_i = K_i x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainSet<T> {
    k: Vec<Matrix<T>>,
}

impl<T: Scalar> GainSet<T> {
    pub fn new(k: Vec<Matrix<T>>) -> Self {
        Self { k }
    }

    pub fn gains(&self) -> &[Matrix<T>] {
        &self.k
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        Ok(Self {
            k: permuted(&self.k, perm)?,
        })
    }
}

/// Which controller is out: `0` is nominal, `j >= 1` is an outage of channel `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FailureMode(pub usize);

impl FailureMode {
    pub const NOMINAL: FailureMode = FailureMode(0);

    pub fn outage(channel: usize) -> Self {
        FailureMode(channel)
    }

    pub fn is_nominal(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// `A + Σ_{i≠j} B_i K_i` (all channels for the nominal mode).
pub fn closed_loop_matrix<T: Scalar>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
) -> Result<Matrix<T>> {
    sys.check_gains(gains)?;
    sys.check_mode(mode)?;
    let mut acl = sys.a.clone();
    for (i, (bi, ki)) in sys.b.iter().zip(&gains.k).enumerate() {
        if i + 1 == mode.0 {
            continue;
        }
        acl = acl.try_add(&bi.try_mul(ki)?)?;
    }
    Ok(acl)
}

/// Largest real part over the spectrum; negative certifies Hurwitz.
pub fn spectral_abscissa<T: Real>(m: &Matrix<T>) -> Result<T> {
    let ev = eigenvalues(m)?;
    Ok(ev.iter().fold(T::neg_infinity(), |acc, e| acc.max(e.re)))
}

/// `exp(M t)`.
pub fn matrix_exponential<T: Real>(m: &Matrix<T>, t: T) -> Result<Matrix<T>> {
    expm(&m.scale(t))
}

/// Solves `A P + P Aᵀ + Q = 0` for Hurwitz `A` by Kronecker vectorization.
///
/// The `d²×d²` system is solved by LU with one step of iterative refinement;
/// the result is symmetrized.
pub fn solve_lyapunov<T: Real>(acl: &Matrix<T>, q: &Matrix<T>) -> Result<Matrix<T>> {
    if !acl.is_square() || q.shape() != acl.shape() {
        return Err(Error::Dimension(format!(
            "Lyapunov: A is {}x{}, Q is {}x{}",
            acl.nrows(),
            acl.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let sym_tol = T::tol(1e-10) * (T::one() + q.max_abs());
    if !q.is_symmetric(sym_tol) {
        return Err(Error::Domain("Lyapunov: Q is not symmetric".into()));
    }
    let abscissa = spectral_abscissa(acl)?;
    if !(abscissa < T::zero()) {
        return Err(Error::NotHurwitz {
            abscissa: abscissa.to_f64_lossy(),
        });
    }
    let d = acl.nrows();
    let n = d * d;
    // Row (i,j): Σ_k A_ik P_kj + Σ_k A_jk P_ik = -Q_ij
    let mut kron = Matrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            let row = i * d + j;
            for k in 0..d {
                kron[(row, k * d + j)] = kron[(row, k * d + j)] + acl[(i, k)];
                kron[(row, i * d + k)] = kron[(row, i * d + k)] + acl[(j, k)];
            }
        }
    }
    let rhs: Vec<T> = q.as_slice().iter().map(|v| -*v).collect();
    let lu = Lu::factor(&kron)?;
    let mut x = lu.solve(&rhs);
    let kx = kron.mul_vec(&x);
    let resid: Vec<T> = rhs.iter().zip(&kx).map(|(b, ax)| *b - *ax).collect();
    let dx = lu.solve(&resid);
    for (xi, di) in x.iter_mut().zip(dx) {
        *xi = *xi + di;
    }
    let p = Matrix::from_row_slice(d, d, &x)?.symmetrize();
    if !p.is_finite() {
        return Err(Error::Numerical("Lyapunov solution is not finite".into()));
    }
    Ok(p)
}

/// `‖A P + P Aᵀ + Q‖_F`.
pub fn lyapunov_residual<T: Real>(acl: &Matrix<T>, p: &Matrix<T>, q: &Matrix<T>) -> T {
    let ap = acl * p;
    let r = &(&ap + &(p * &acl.transpose())) + q;
    r.frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: Vec<Vec<f64>>) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn s1() -> (MultiChannelSystem<f64>, GainSet<f64>) {
        let sys = MultiChannelSystem::new(
            m(vec![vec![1.0]]),
            vec![m(vec![vec![1.0]]), m(vec![vec![1.0]])],
            DiffusionSpec::constant(m(vec![vec![1.0]])).unwrap(),
        )
        .unwrap();
        let gains = GainSet::new(vec![m(vec![vec![-2.0]]), m(vec![vec![-2.0]])]);
        (sys, gains)
    }

    #[test]
    fn closed_loop_scalar_examples() {
        let (sys, gains) = s1();
        assert_eq!(closed_loop_matrix(&sys, &gains, FailureMode(0)).unwrap()[(0, 0)], -3.0);
        assert_eq!(closed_loop_matrix(&sys, &gains, FailureMode(1)).unwrap()[(0, 0)], -1.0);
        let zero = GainSet::new(vec![m(vec![vec![0.0]]), m(vec![vec![0.0]])]);
        for j in 0..=2 {
            assert_eq!(closed_loop_matrix(&sys, &zero, FailureMode(j)).unwrap()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn closed_loop_dimension_errors() {
        let (sys, _) = s1();
        let bad = GainSet::new(vec![m(vec![vec![0.0, 1.0]]), m(vec![vec![0.0]])]);
        assert!(matches!(
            closed_loop_matrix(&sys, &bad, FailureMode(0)),
            Err(Error::Dimension(_))
        ));
        let short = GainSet::new(vec![m(vec![vec![0.0]])]);
        assert!(matches!(
            closed_loop_matrix(&sys, &short, FailureMode(0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn system_validation() {
        let sig = DiffusionSpec::constant(m(vec![vec![1.0]])).unwrap();
        assert!(MultiChannelSystem::new(m(vec![vec![1.0]]), vec![m(vec![vec![1.0], vec![0.0]])], sig.clone()).is_err());
        assert!(MultiChannelSystem::new(m(vec![vec![f64::NAN]]), vec![m(vec![vec![1.0]])], sig.clone()).is_err());
        assert!(MultiChannelSystem::new(m(vec![vec![f64::INFINITY]]), vec![m(vec![vec![1.0]])], sig).is_err());
    }

    #[test]
    fn diffusion_constructors() {
        assert!(DiffusionSpec::constant(m(vec![vec![1.0, 0.0], vec![1.0, 0.0]])).is_err());
        let c = DiffusionSpec::constant(m(vec![vec![2.0, 0.0], vec![0.0, 0.5]])).unwrap();
        assert!((c.kappa() - 0.25).abs() < 1e-14);
        assert!(DiffusionSpec::diag_affine(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(DiffusionSpec::diag_affine(vec![1.0], vec![-0.1]).is_err());
        let da = DiffusionSpec::diag_affine(vec![0.5, 2.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(*da.kappa(), 0.25);
        let sig = da.sigma_at(&[-2.0, 3.0]);
        assert_eq!(sig.diagonal(), vec![2.5, 2.0]);
    }

    #[test]
    fn spectral_abscissa_examples() {
        assert_eq!(spectral_abscissa(&Matrix::from_diagonal(&[-3.0, -1.0])).unwrap(), -1.0);
        let rot = m(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert!(spectral_abscissa(&rot).unwrap().abs() < 1e-14);
    }

    #[test]
    fn expm_examples() {
        let n = m(vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        let e = matrix_exponential(&n, 2.5).unwrap();
        assert!(e.max_abs_diff(&m(vec![vec![1.0, 2.5], vec![0.0, 1.0]])) < 1e-15);
        let z = matrix_exponential(&Matrix::<f64>::zeros(2, 2), 7.0).unwrap();
        assert_eq!(z, Matrix::identity(2));
    }

    #[test]
    fn lyapunov_examples() {
        let p = solve_lyapunov(&m(vec![vec![-3.0]]), &m(vec![vec![1.0]])).unwrap();
        assert!((p[(0, 0)] - 1.0 / 6.0).abs() < 1e-15);
        let p = solve_lyapunov(&Matrix::from_diagonal(&[-1.0, -2.0]), &Matrix::identity(2)).unwrap();
        assert!(p.max_abs_diff(&Matrix::from_diagonal(&[0.5, 0.25])) < 1e-15);
        let err = solve_lyapunov(&m(vec![vec![1.0]]), &m(vec![vec![1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }));
    }

    #[test]
    fn permutation_validation() {
        let (sys, gains) = s1();
        assert!(sys.permute_channels(&[1, 0]).is_ok());
        assert!(sys.permute_channels(&[0, 0]).is_err());
        assert!(gains.permute_channels(&[2, 0]).is_err());
    }
}
