use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::system::{closed_loop_matrix, spectral_abscissa, DiffusionSpec, FailureMode, GainSet, MultiChannelSystem};

/// Any state component beyond this magnitude aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Histograms with more than this fraction of samples outside the box fail.
pub const MAX_LEAKAGE: f64 = 0.10;

/// Endpoints `x(t_final)` of independent Euler–Maruyama paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet<T> {
    /// `n × d`, one path per row.
    pub samples: Matrix<T>,
    pub seed: u64,
    pub t_final: T,
    pub dt: T,
    pub mode: FailureMode,
}

impl<T: Real> SampleSet<T> {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn mean(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.len());
        (0..self.dim())
            .map(|k| (0..self.len()).map(|i| self.samples[(i, k)]).sum::<T>() / n)
            .collect()
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Matrix<T> {
        let d = self.dim();
        let n = self.len();
        let mean = self.mean();
        let mut c = Matrix::zeros(d, d);
        for i in 0..n {
            let row = self.samples.row(i);
            for a in 0..d {
                for b in 0..d {
                    c[(a, b)] = c[(a, b)] + (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
        c.scale(T::one() / T::from_usize_lossy(n.max(2) - 1))
    }

    /// Per-axis sample range.
    pub fn bounds(&self) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for i in 0..self.len() {
            for (k, v) in self.samples.row(i).iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        (lo, hi)
    }
}

/// `1e-3 · min(1, 1/‖A_j‖_F)`.
pub fn default_dt<T: Real>(acl: &Matrix<T>) -> T {
    let norm = acl.frobenius_norm();
    let factor = if norm > T::one() { T::one() / norm } else { T::one() };
    T::lit(1e-3) * factor
}

/// Twenty time constants, `20 / |spectral abscissa|`.
pub fn default_horizon<T: Real>(acl: &Matrix<T>) -> Result<T> {
    let a = spectral_abscissa(acl)?;
    if !(a < T::zero()) {
        return Err(Error::NotHurwitz {
            abscissa: a.to_f64_lossy(),
        });
    }
    Ok(T::lit(20.0) / a.abs())
}

/// Simulates `n_paths` trajectories from `x(0) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sde<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<SampleSet<T>> {
    let x0 = vec![T::zero(); sys.dim()];
    simulate_sde_from(sys, gains, mode, eps, horizon, dt, n_paths, seed, &x0)
}

/// [`simulate_sde`] from an arbitrary deterministic initial state.
///
/// Path `i` draws from ChaCha8 seeded with `seed` on stream `i`, so the
/// output does not depend on scheduling or thread count. The number of steps
/// is `round(horizon / dt)` and the recorded `t_final` is `steps · dt`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sde_from<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    mode: FailureMode,
    eps: T,
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
    x0: &[T],
) -> Result<SampleSet<T>> {
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon {horizon} must be at least dt {dt}")));
    }
    if n_paths == 0 {
        return Err(Error::Domain("n_paths must be at least 1".into()));
    }
    if !(eps >= T::zero() && eps.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be nonnegative, got {eps}")));
    }
    if x0.len() != sys.dim() {
        return Err(Error::Dimension(format!(
            "initial state of length {} for dimension {}",
            x0.len(),
            sys.dim()
        )));
    }
    let acl = closed_loop_matrix(sys, gains, mode)?;
    let steps = (horizon / dt).round().to_usize().unwrap_or(1).max(1);
    let stepper = Stepper::new(&acl, sys.sigma(), eps, dt);

    let rows: Vec<std::result::Result<Vec<T>, usize>> = (0..n_paths)
        .into_par_iter()
        .map(|path| stepper.run(x0, steps, seed, path))
        .collect();
    let d = sys.dim();
    let mut data = Vec::with_capacity(n_paths * d);
    for row in rows {
        match row {
            Ok(x) => data.extend(x),
            Err(path) => return Err(Error::Divergence { path }),
        }
    }
    Ok(SampleSet {
        samples: Matrix::from_row_slice(n_paths, d, &data)?,
        seed,
        t_final: T::from_usize_lossy(steps) * dt,
        dt,
        mode,
    })
}

enum Noise<T> {
    /// Precomputed `ε √dt S`, `d × m` row-major.
    Constant { l: Vec<T>, m: usize },
    /// `ε √dt (c_i + s_i |x_i|)`.
    Diag { c: Vec<T>, s: Vec<T>, scale: T },
}

struct Stepper<T> {
    d: usize,
    /// `I + dt A_j`, row-major.
    drift: Vec<T>,
    noise: Noise<T>,
}

impl<T: Real> Stepper<T> {
    fn new(acl: &Matrix<T>, sigma: &DiffusionSpec<T>, eps: T, dt: T) -> Self {
        let d = acl.nrows();
        let drift = (&Matrix::identity(d) + &acl.scale(dt)).as_slice().to_vec();
        let scale = eps * dt.sqrt();
        let noise = match sigma {
            DiffusionSpec::Constant { s, .. } => Noise::Constant {
                l: s.scale(scale).as_slice().to_vec(),
                m: s.ncols(),
            },
            DiffusionSpec::DiagAffine { c, s, .. } => Noise::Diag {
                c: c.clone(),
                s: s.clone(),
                scale,
            },
        };
        Self { d, drift, noise }
    }

    fn run(&self, x0: &[T], steps: usize, seed: u64, path: usize) -> std::result::Result<Vec<T>, usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let bound = T::lit(DIVERGENCE_BOUND);
        let d = self.d;
        if d == 1 {
            return self.run_scalar(x0[0], steps, &mut rng, bound, path).map(|x| vec![x]);
        }
        let m = match &self.noise {
            Noise::Constant { m, .. } => *m,
            Noise::Diag { .. } => d,
        };
        let mut x = x0.to_vec();
        let mut next = vec![T::zero(); d];
        let mut xi = vec![T::zero(); m];
        for _ in 0..steps {
            for v in xi.iter_mut() {
                *v = T::lit(rng.sample::<f64, _>(StandardNormal));
            }
            for i in 0..d {
                let row = &self.drift[i * d..(i + 1) * d];
                let mut v = row.iter().zip(&x).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
                v = v + match &self.noise {
                    Noise::Constant { l, .. } => l[i * m..(i + 1) * m]
                        .iter()
                        .zip(&xi)
                        .fold(T::zero(), |acc, (a, b)| acc + *a * *b),
                    Noise::Diag { c, s, scale } => *scale * (c[i] + s[i] * x[i].abs()) * xi[i],
                };
                next[i] = v;
            }
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !(v.abs() <= bound)) {
                return Err(path);
            }
        }
        Ok(x)
    }

    fn run_scalar(
        &self,
        mut x: T,
        steps: usize,
        rng: &mut ChaCha8Rng,
        bound: T,
        path: usize,
    ) -> std::result::Result<T, usize> {
        let a = self.drift[0];
        match &self.noise {
            Noise::Constant { l, m } => {
                let l = &l[..*m];
                for _ in 0..steps {
                    let mut v = a * x;
                    for li in l {
                        v = v + *li * T::lit(rng.sample::<f64, _>(StandardNormal));
                    }
                    x = v;
                    if !(x.abs() <= bound) {
                        return Err(path);
                    }
                }
            }
            Noise::Diag { c, s, scale } => {
                for _ in 0..steps {
                    let xi = T::lit(rng.sample::<f64, _>(StandardNormal));
                    x = a * x + *scale * (c[0] + s[0] * x.abs()) * xi;
                    if !(x.abs() <= bound) {
                        return Err(path);
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Normalized histogram plus the fraction of samples that fell outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T> {
    pub density: GridDensity<T>,
    pub leakage: T,
}

/// Bins `samples` on `grid`; fails when more than 10% fall outside.
pub fn histogram<T: Real>(samples: &SampleSet<T>, grid: &GridSpec<T>) -> Result<Histogram<T>> {
    if grid.dim() != samples.dim() {
        return Err(Error::Dimension(format!(
            "{}-dimensional grid for {}-dimensional samples",
            grid.dim(),
            samples.dim()
        )));
    }
    let mut counts = vec![T::zero(); grid.len()];
    let mut outside = 0usize;
    for i in 0..samples.len() {
        match grid.locate(samples.samples.row(i)) {
            Some(c) => counts[c] = counts[c] + T::one(),
            None => outside += 1,
        }
    }
    let leakage = T::from_usize_lossy(outside) / T::from_usize_lossy(samples.len());
    if leakage > T::lit(MAX_LEAKAGE) {
        return Err(Error::OutOfBox {
            leakage: leakage.to_f64_lossy(),
        });
    }
    Ok(Histogram {
        density: GridDensity::from_unnormalized(grid.clone(), counts)?,
        leakage,
    })
}

/// Normalized histogram of `samples` at the cell centres of `grid`.
pub fn empirical_density<T: Real>(samples: &SampleSet<T>, grid: &GridSpec<T>) -> Result<GridDensity<T>> {
    histogram(samples, grid).map(|h| h.density)
}
