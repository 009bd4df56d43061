use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};
use crate::linalg::{BandedLu, Matrix};
use crate::liouville::GaussianDensity;
use crate::scalar::Real;
use crate::system::{closed_loop_matrix, spectral_abscissa, DiffusionSpec, FailureMode, GainSet, MultiChannelSystem};

/// Relative pivot size below which the generator is counted as singular.
const NULL_PIVOT_TOL: f64 = 1e-9;
/// Most negative entry tolerated in a normalized grid solution.
const NEGATIVE_TOL: f64 = -1e-10;

/// Density handed to [`fp_residual`].
#[derive(Debug, Clone, Copy)]
pub enum FpDensity<'a, T> {
    Gaussian(&'a GaussianDensity<T>),
    /// Must live on the same grid as the residual.
    Grid(&'a GridDensity<T>),
}

/// `D(x) = (ε²/2) σ(x) σ(x)ᵀ` and its axis derivatives, enough for the two
/// diffusion variants.
struct Diffusion<T> {
    eps2_half: T,
    sigma: DiffusionSpec<T>,
}

impl<T: Real> Diffusion<T> {
    fn at(&self, x: &[T]) -> Matrix<T> {
        self.sigma.diffusion_at(x).scale(self.eps2_half)
    }

    /// `∂_k D_kk(x)`; zero for constant diffusion.
    fn diag_slope(&self, x: &[T], k: usize) -> T {
        match &self.sigma {
            DiffusionSpec::Constant { .. } => T::zero(),
            DiffusionSpec::DiagAffine { c, s, .. } => {
                let g = c[k] + s[k] * x[k].abs();
                let sign = if x[k] > T::zero() {
                    T::one()
                } else if x[k] < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                T::lit(2.0) * self.eps2_half * g * s[k] * sign
            }
        }
    }
}

fn check_low_dim<T: Real>(sys: &MultiChannelSystem<T>, grid: &GridSpec<T>) -> Result<()> {
    if grid.dim() != sys.dim() {
        return Err(Error::Dimension(format!(
            "{}-dimensional grid for a {}-dimensional system",
            grid.dim(),
            sys.dim()
        )));
    }
    if sys.dim() > 2 {
        return Err(Error::InvalidInput(format!(
            "grid Fokker–Planck needs dimension 1 or 2, got {}",
            sys.dim()
        )));
    }
    Ok(())
}

/// Largest absolute value over interior cells of the central-difference
/// stationary operator `−∇·(A_j x ρ) + Σ ∂_k ∂_l (D_kl ρ)` applied to
/// `density`. Second order in the spacing for smooth densities.
pub fn fp_residual<T: Real>(
    density: FpDensity<'_, T>,
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
    grid: &GridSpec<T>,
) -> Result<T> {
    check_low_dim(sys, grid)?;
    if let FpDensity::Grid(g) = density {
        if !g.grid.same_as(grid) {
            return Err(Error::GridMismatch);
        }
    }
    let acl = closed_loop_matrix(sys, gains, mode)?;
    let diff = Diffusion {
        eps2_half: eps * eps * T::lit(0.5),
        sigma: sys.sigma().clone(),
    };
    let gauss = match density {
        FpDensity::Gaussian(g) => Some(g.evaluator()),
        FpDensity::Grid(_) => None,
    };
    let d = grid.dim();
    let h: Vec<T> = (0..d).map(|k| grid.spacing(k)).collect();
    if grid.n_cells.iter().any(|&n| n < 3) {
        return Err(Error::InvalidInput("residual needs at least 3 cells per axis".into()));
    }

    // ρ at the cell `base + off`, together with its coordinates.
    let eval = |base: &[usize], off: &[isize]| -> (Vec<T>, T) {
        let idx: Vec<usize> = base
            .iter()
            .zip(off)
            .map(|(b, o)| (*b as isize + o) as usize)
            .collect();
        let x: Vec<T> = idx.iter().enumerate().map(|(k, &i)| grid.center(k, i)).collect();
        let rho = match (&gauss, density) {
            (Some(g), _) => g.pdf(&x),
            (None, FpDensity::Grid(g)) => g.values[grid.flat(&idx)],
            (None, FpDensity::Gaussian(_)) => unreachable!(),
        };
        (x, rho)
    };
    let unit = |k: usize, s: isize| -> Vec<isize> {
        let mut o = vec![0isize; d];
        o[k] = s;
        o
    };

    let mut worst = T::zero();
    for c in 0..grid.len() {
        let base = grid.unflat(c);
        if base.iter().zip(&grid.n_cells).any(|(&i, &n)| i == 0 || i + 1 == n) {
            continue;
        }
        let (x0, rho0) = eval(&base, &vec![0; d]);
        let d0 = diff.at(&x0);
        let mut value = T::zero();
        for k in 0..d {
            let (xp, rp) = eval(&base, &unit(k, 1));
            let (xm, rm) = eval(&base, &unit(k, -1));
            let bp = acl.row(k).iter().zip(&xp).fold(T::zero(), |a, (m, v)| a + *m * *v);
            let bm = acl.row(k).iter().zip(&xm).fold(T::zero(), |a, (m, v)| a + *m * *v);
            value = value - (bp * rp - bm * rm) / (T::lit(2.0) * h[k]);
            let dp = diff.at(&xp)[(k, k)];
            let dm = diff.at(&xm)[(k, k)];
            value = value + (dp * rp - T::lit(2.0) * d0[(k, k)] * rho0 + dm * rm) / (h[k] * h[k]);
        }
        if d == 2 {
            let mut mixed = T::zero();
            for (s0, s1, sign) in [(1, 1, T::one()), (1, -1, -T::one()), (-1, 1, -T::one()), (-1, -1, T::one())] {
                let (x, r) = eval(&base, &[s0, s1]);
                mixed = mixed + sign * diff.at(&x)[(0, 1)] * r;
            }
            // ∂₀∂₁(D₀₁ρ) + ∂₁∂₀(D₁₀ρ)
            value = value + T::lit(2.0) * mixed / (T::lit(4.0) * h[0] * h[1]);
        }
        worst = worst.max(value.abs());
    }
    Ok(worst)
}

/// Bernoulli function `z / (eᶻ − 1)`.
fn bernoulli<T: Real>(z: T) -> T {
    if z.abs() < T::lit(1e-8) {
        T::one() - z * T::lit(0.5)
    } else {
        z / z.exp_m1()
    }
}

/// Stationary density on `grid` with zero-flux walls.
///
/// Finite volumes: the diagonal diffusion part uses exponentially fitted
/// (Scharfetter–Gummel) face fluxes, which make the operator the generator of
/// a positive jump process; constant off-diagonal diffusion in 2D adds
/// central cross fluxes. The null vector comes from inverse iteration with
/// zero shift on the banded LU factors.
pub fn solve_stationary_fp_grid<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
    grid: &GridSpec<T>,
) -> Result<GridDensity<T>> {
    check_low_dim(sys, grid)?;
    if !(eps > T::zero() && eps.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be positive, got {eps}")));
    }
    let acl = closed_loop_matrix(sys, gains, mode)?;
    let abscissa = spectral_abscissa(&acl)?;
    if !(abscissa < T::zero()) {
        return Err(Error::NotHurwitz {
            abscissa: abscissa.to_f64_lossy(),
        });
    }
    let diff = Diffusion {
        eps2_half: eps * eps * T::lit(0.5),
        sigma: sys.sigma().clone(),
    };
    let d = grid.dim();
    let n = grid.len();
    let stride = if d == 2 { grid.n_cells[1] } else { 1 };
    let band = if d == 2 { stride + 1 } else { 1 };
    let mut gen = BandedLu::new(n, band, band);

    for p in 0..n {
        let idx = grid.unflat(p);
        for k in 0..d {
            if idx[k] + 1 == grid.n_cells[k] {
                continue;
            }
            let mut qidx = idx.clone();
            qidx[k] += 1;
            let q = grid.flat(&qidx);
            let h = grid.spacing(k);
            let mut face: Vec<T> = idx.iter().enumerate().map(|(a, &i)| grid.center(a, i)).collect();
            face[k] = grid.lo[k] + T::from_usize_lossy(idx[k] + 1) * h;

            let dk = diff.at(&face)[(k, k)];
            let drift = acl.row(k).iter().zip(&face).fold(T::zero(), |a, (m, v)| a + *m * *v)
                - diff.diag_slope(&face, k);
            let z = drift * h / dk;
            let base = dk / (h * h);
            let forward = base * bernoulli(-z);
            let backward = base * bernoulli(z);
            gen.add(q, p, forward);
            gen.add(p, p, -forward);
            gen.add(p, q, backward);
            gen.add(q, q, -backward);

            if d == 2 {
                let d01 = diff.at(&face)[(0, 1)];
                if d01 != T::zero() {
                    add_cross_flux(&mut gen, grid, &idx, &qidx, k, d01);
                }
            }
        }
    }

    let lu = gen.factor_generator();
    let zero_pivots = lu.near_zero_pivots(T::lit(NULL_PIVOT_TOL));
    if zero_pivots != 1 {
        return Err(Error::NonUnique { zero_pivots });
    }
    let mut x = vec![T::one() / T::from_usize_lossy(n); n];
    for _ in 0..3 {
        x = lu.solve(&x);
        let scale = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !(scale > T::zero() && scale.is_finite()) {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        x.iter_mut().for_each(|v| *v = *v / scale);
    }
    let total: T = x.iter().copied().sum();
    let sign = if total < T::zero() { -T::one() } else { T::one() };
    let mass = total.abs() * grid.cell_volume();
    let mut values: Vec<T> = x.into_iter().map(|v| sign * v / mass).collect();
    let min = values.iter().fold(T::infinity(), |m, v| m.min(*v));
    if min < T::lit(NEGATIVE_TOL) {
        return Err(Error::Numerical(format!(
            "grid solution has a negative entry {:e}",
            min.to_f64_lossy()
        )));
    }
    values.iter_mut().for_each(|v| *v = v.max(T::zero()));
    GridDensity::from_unnormalized(grid.clone(), values)
}

/// Cross flux `J = −D₀₁ ∂_⊥ρ` through the face between `p` (lower) and
/// `q` along axis `k`; the transverse derivative averages central (one-sided
/// at walls) differences in the two adjacent cells.
fn add_cross_flux<T: Real>(
    gen: &mut BandedLu<T>,
    grid: &GridSpec<T>,
    pidx: &[usize],
    qidx: &[usize],
    k: usize,
    d01: T,
) {
    let other = 1 - k;
    let n_other = grid.n_cells[other];
    let i = pidx[other];
    let up = (i + 1).min(n_other - 1);
    let down = i.saturating_sub(1);
    if up == down {
        return;
    }
    let h_other = grid.spacing(other);
    let h_k = grid.spacing(k);
    // ∂_⊥ρ at the face ≈ Σ_{c∈{p,q}} (ρ_c(up) − ρ_c(down)) / (2 (up−down) h)
    let w = d01 / (T::lit(2.0) * T::from_usize_lossy(up - down) * h_other);
    let p = grid.flat(pidx);
    let q = grid.flat(qidx);
    for cell in [pidx, qidx] {
        for (pos, sign) in [(up, T::one()), (down, -T::one())] {
            let mut idx = cell.to_vec();
            idx[other] = pos;
            let c = grid.flat(&idx);
            // J = −w·(…); dρ_p/dt −= J/h, dρ_q/dt += J/h
            let coeff = -w * sign / h_k;
            gen.add(p, c, -coeff);
            gen.add(q, c, coeff);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::stationary_gaussian;
    use crate::stochastic::tests::scalar;

    #[test]
    fn ou_grid_matches_gaussian() {
        let (sys, k) = scalar(-1.0);
        let grid = GridSpec::uniform(vec![-6.0], vec![6.0], 801).unwrap();
        let rho = solve_stationary_fp_grid(&sys, &k, FailureMode::NOMINAL, 1.0, &grid).unwrap();
        let g = stationary_gaussian(&sys, &k, FailureMode::NOMINAL, 1.0).unwrap();
        let exact = GridDensity::from_fn(grid.clone(), |x| g.pdf(x)).unwrap();
        assert!(rho.l1_distance(&exact).unwrap() < 1e-3);
        let n = rho.values.len();
        for i in 0..n {
            assert!((rho.values[i] - rho.values[n - 1 - i]).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_is_second_order() {
        let (sys, k) = scalar(-1.0);
        let g = stationary_gaussian(&sys, &k, FailureMode::NOMINAL, 1.0).unwrap();
        let res = |h: f64| {
            let n = (8.0 / h).round() as usize;
            let grid = GridSpec::uniform(vec![-4.0], vec![-4.0 + n as f64 * h], n).unwrap();
            fp_residual(FpDensity::Gaussian(&g), &sys, &k, FailureMode::NOMINAL, 1.0, &grid).unwrap()
        };
        let (r1, r2) = (res(0.02), res(0.01));
        assert!(r2 < 1e-3);
        assert!((2.5..6.0).contains(&(r1 / r2)), "{r1} {r2}");
        let wrong = GaussianDensity::new(vec![0.0], Matrix::from_diagonal(&[1.0])).unwrap();
        let grid = GridSpec::uniform(vec![-4.0], vec![4.0], 800).unwrap();
        let rw = fp_residual(FpDensity::Gaussian(&wrong), &sys, &k, FailureMode::NOMINAL, 1.0, &grid).unwrap();
        assert!(rw > 10.0 * r2);
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0f64), 1.0);
        assert!((bernoulli(1.0f64) - 1.0 / (1f64.exp() - 1.0)).abs() < 1e-15);
        let z = 3.7f64;
        assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-12);
    }
}
