//! Systemic redundancy: average relative entropy of the single-outage laws
//! against the nominal law, minus the nominal entropy. Stationary laws give
//! `r(σ, ε)`; laws transported by the unperturbed flows give `r_t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};
use crate::info::{gaussian_entropy, gaussian_kl, grid_entropy, grid_kl, Bits, Divergence};
use crate::liouville::{
    integrate_gaussian_transport, pushforward_gaussian, GaussianDensity, GeneralDensity,
    JacobianConvention, ModeFlow,
};
use crate::reliable::require_reliable;
use crate::scalar::Real;
use crate::stochastic::{
    default_dt, default_horizon, histogram, simulate_sde, solve_stationary_fp_grid,
    stationary_gaussian, stationary_scale, Perturbation, SampleSet,
};
use crate::system::{closed_loop_matrix, FailureMode, GainSet, MultiChannelSystem};

/// How the stationary laws are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Lyapunov covariances and Gaussian formulas (constant σ only).
    #[default]
    ClosedForm,
    /// Euler–Maruyama samples binned on shared grids (d ≤ 2).
    MonteCarlo,
    /// Stationary Fokker–Planck grid solutions (d ≤ 2).
    Grid,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ClosedForm => "closed_form",
            Self::MonteCarlo => "monte_carlo",
            Self::Grid => "grid",
        }
    }
}

/// Weight in front of the summed relative entropies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgNormalization {
    /// `1/(2N)`.
    #[default]
    HalfN,
    /// `1/N`, the plain average.
    Mean,
}

impl AvgNormalization {
    pub fn factor<T: Real>(self, channels: usize) -> T {
        let n = T::from_usize_lossy(channels);
        match self {
            Self::HalfN => T::one() / (T::lit(2.0) * n),
            Self::Mean => T::one() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions<T> {
    pub n_paths: usize,
    /// Step size; per-mode default `1e-3 · min(1, 1/‖A_j‖)` when `None`.
    pub dt: Option<T>,
    /// Simulated time; per-mode default `20/|abscissa(A_j)|` when `None`.
    pub horizon: Option<T>,
    pub cells_1d: usize,
    pub cells_2d: usize,
}

impl<T: Real> Default for MonteCarloOptions<T> {
    fn default() -> Self {
        Self {
            n_paths: 200_000,
            dt: None,
            horizon: None,
            cells_1d: 400,
            cells_2d: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions<T> {
    /// Box half-width in largest stationary standard deviations.
    pub k_sigma: T,
    pub cells_1d: usize,
    pub cells_2d: usize,
    /// Explicit box `(lo, hi)`; overrides `k_sigma` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Default for GridOptions<T> {
    fn default() -> Self {
        Self {
            k_sigma: T::lit(6.0),
            cells_1d: 801,
            cells_2d: 101,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyOptions<T> {
    pub method: Method,
    pub normalization: AvgNormalization,
    pub seed: u64,
    pub monte_carlo: MonteCarloOptions<T>,
    pub grid: GridOptions<T>,
}

impl<T: Real> Default for RedundancyOptions<T> {
    fn default() -> Self {
        Self {
            method: Method::ClosedForm,
            normalization: AvgNormalization::HalfN,
            seed: 42,
            monte_carlo: MonteCarloOptions::default(),
            grid: GridOptions::default(),
        }
    }
}

/// Options for transported (Liouville) laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleOptions<T> {
    pub jacobian: JacobianConvention,
    pub normalization: AvgNormalization,
    /// Box half-width for Gaussian mass checks, in standard deviations.
    pub k_sigma: T,
    /// Trapezoid nodes per axis for mass checks (odd).
    pub points_1d: usize,
    pub points_2d: usize,
    /// Cells per axis for non-Gaussian initial densities.
    pub cells_1d: usize,
    pub cells_2d: usize,
}

impl<T: Real> Default for LiouvilleOptions<T> {
    fn default() -> Self {
        Self {
            jacobian: JacobianConvention::MassConserving,
            normalization: AvgNormalization::HalfN,
            k_sigma: T::lit(8.0),
            points_1d: 401,
            points_2d: 201,
            cells_1d: 400,
            cells_2d: 200,
        }
    }
}

/// Inputs that shaped a report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance<T> {
    pub normalization: AvgNormalization,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Per-mode seeds, nominal first (Monte Carlo only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mode_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dt: Vec<T>,
    /// Simulated time per mode (`steps · dt`).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub horizon: Vec<T>,
    /// Grids used, one per density or per pair.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub grids: Vec<GridSpec<T>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub jacobian: Option<JacobianConvention>,
    /// Integral of each transported density, nominal first.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mass_per_mode: Vec<T>,
}

/// `r = avg_term − entropy_term` with every ingredient exposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport<T> {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time: Option<T>,
    /// `D(μ⁽ⁱ⁾ ‖ μ⁽⁰⁾)` for `i = 1 … N`.
    pub kl_per_channel: Vec<Divergence<T>>,
    pub avg_term: Divergence<T>,
    /// Entropy of the nominal law.
    pub entropy_term: Bits<T>,
    pub r: Divergence<T>,
    pub method: Method,
    pub provenance: Provenance<T>,
}

fn assemble<T: Real>(
    kl: Vec<Divergence<T>>,
    entropy: Bits<T>,
    normalization: AvgNormalization,
) -> (Divergence<T>, Divergence<T>, Vec<Divergence<T>>) {
    let violations: usize = kl
        .iter()
        .map(|k| match k {
            Divergence::Infinite { support_violations } => *support_violations,
            Divergence::Finite(_) => 0,
        })
        .sum();
    if kl.iter().any(|k| !k.is_finite()) {
        let inf = Divergence::Infinite {
            support_violations: violations,
        };
        return (inf, inf, kl);
    }
    let sum: T = kl.iter().map(|k| k.expect_finite()).sum();
    let avg = sum * normalization.factor::<T>(kl.len());
    (
        Divergence::Finite(Bits(avg)),
        Divergence::Finite(Bits(avg - entropy.0)),
        kl,
    )
}

/// SplitMix64 finalizer applied to `base` offset by `index`; used for
/// per-row and per-mode seeds so results do not depend on scheduling.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `r(σ, ε)` for a reliable gain set.
pub fn systemic_redundancy<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    eps: T,
    opts: &RedundancyOptions<T>,
) -> Result<RedundancyReport<T>> {
    let eps = Perturbation::new(eps)?.epsilon();
    require_reliable(sys, gains)?;
    let mut report = match opts.method {
        Method::ClosedForm => closed_form(sys, gains, eps, opts)?,
        Method::MonteCarlo => monte_carlo(sys, gains, eps, opts)?,
        Method::Grid => grid_method(sys, gains, eps, opts)?,
    };
    report.epsilon = Some(eps);
    Ok(report)
}

fn closed_form<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    eps: T,
    opts: &RedundancyOptions<T>,
) -> Result<RedundancyReport<T>> {
    let laws = sys
        .modes()
        .map(|mode| stationary_gaussian(sys, gains, mode, eps))
        .collect::<Result<Vec<_>>>()?;
    let entropy = gaussian_entropy(&laws[0])?;
    let kl = laws[1..]
        .iter()
        .map(|q| gaussian_kl(q, &laws[0]).map(Divergence::Finite))
        .collect::<Result<Vec<_>>>()?;
    let (avg_term, r, kl_per_channel) = assemble(kl, entropy, opts.normalization);
    Ok(RedundancyReport {
        epsilon: None,
        time: None,
        kl_per_channel,
        avg_term,
        entropy_term: entropy,
        r,
        method: Method::ClosedForm,
        provenance: Provenance {
            normalization: opts.normalization,
            ..Provenance::default()
        },
    })
}

fn check_grid_dim<T: Real>(sys: &MultiChannelSystem<T>, method: Method) -> Result<()> {
    if sys.dim() > 2 {
        return Err(Error::InvalidInput(format!(
            "method {} supports dimension 1 or 2, got {}",
            method.as_str(),
            sys.dim()
        )));
    }
    Ok(())
}

fn cells_for(d: usize, cells_1d: usize, cells_2d: usize) -> usize {
    if d == 1 {
        cells_1d
    } else {
        cells_2d
    }
}

fn box_grid<T: Real>(lo: Vec<T>, hi: Vec<T>, cells: usize) -> Result<GridSpec<T>> {
    // Degenerate ranges (all samples equal) get a unit-width box.
    let (lo, hi): (Vec<T>, Vec<T>) = lo
        .into_iter()
        .zip(hi)
        .map(|(a, b)| if b > a { (a, b) } else { (a - T::lit(0.5), a + T::lit(0.5)) })
        .unzip();
    GridSpec::uniform(lo, hi, cells)
}

fn monte_carlo<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    eps: T,
    opts: &RedundancyOptions<T>,
) -> Result<RedundancyReport<T>> {
    check_grid_dim(sys, Method::MonteCarlo)?;
    let mc = &opts.monte_carlo;
    let d = sys.dim();
    let cells = cells_for(d, mc.cells_1d, mc.cells_2d);
    let modes: Vec<FailureMode> = sys.modes().collect();
    let mode_seeds: Vec<u64> = modes
        .iter()
        .map(|m| derive_seed(opts.seed, m.index() as u64))
        .collect();
    let sets = modes
        .iter()
        .zip(&mode_seeds)
        .map(|(&mode, &seed)| {
            let acl = closed_loop_matrix(sys, gains, mode)?;
            let dt = mc.dt.unwrap_or_else(|| default_dt(&acl));
            let horizon = match mc.horizon {
                Some(h) => h,
                None => default_horizon(&acl)?,
            };
            simulate_sde(sys, gains, mode, eps, horizon, dt, mc.n_paths, seed)
        })
        .collect::<Result<Vec<SampleSet<T>>>>()?;

    let nominal = &sets[0];
    let (lo0, hi0) = nominal.bounds();
    let own = box_grid(lo0.clone(), hi0.clone(), cells)?;
    let entropy = grid_entropy(&histogram(nominal, &own)?.density);
    let mut grids = vec![own];
    let mut kl = Vec::with_capacity(sets.len() - 1);
    for q in &sets[1..] {
        let (lo, hi) = q.bounds();
        let lo = lo.iter().zip(&lo0).map(|(a, b)| a.min(*b)).collect();
        let hi = hi.iter().zip(&hi0).map(|(a, b)| a.max(*b)).collect();
        let shared = box_grid(lo, hi, cells)?;
        let qd = histogram(q, &shared)?.density;
        // Nominal samples rarely reach the far tails of the wider failure
        // laws; empty reference cells are completed from their nearest
        // occupied window before taking the ratio.
        let pd = histogram(nominal, &shared)?.density.fill_empty_cells()?;
        kl.push(grid_kl(&qd, &pd)?);
        grids.push(shared);
    }
    let (avg_term, r, kl_per_channel) = assemble(kl, entropy, opts.normalization);
    Ok(RedundancyReport {
        epsilon: None,
        time: None,
        kl_per_channel,
        avg_term,
        entropy_term: entropy,
        r,
        method: Method::MonteCarlo,
        provenance: Provenance {
            normalization: opts.normalization,
            seed: Some(opts.seed),
            mode_seeds,
            n_paths: Some(mc.n_paths),
            dt: sets.iter().map(|s| s.dt).collect(),
            horizon: sets.iter().map(|s| s.t_final).collect(),
            grids,
            ..Provenance::default()
        },
    })
}

fn grid_method<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    eps: T,
    opts: &RedundancyOptions<T>,
) -> Result<RedundancyReport<T>> {
    check_grid_dim(sys, Method::Grid)?;
    let d = sys.dim();
    let cells = cells_for(d, opts.grid.cells_1d, opts.grid.cells_2d);
    let grid = match &opts.grid.bounds {
        Some((lo, hi)) => GridSpec::uniform(lo.clone(), hi.clone(), cells)?,
        None => {
            let mut half = T::zero();
            for mode in sys.modes() {
                let sd = stationary_scale(sys, gains, mode, eps)?;
                half = sd.iter().fold(half, |m, v| m.max(*v * opts.grid.k_sigma));
            }
            GridSpec::uniform(vec![-half; d], vec![half; d], cells)?
        }
    };
    let laws = sys
        .modes()
        .map(|mode| solve_stationary_fp_grid(sys, gains, mode, eps, &grid))
        .collect::<Result<Vec<GridDensity<T>>>>()?;
    let entropy = grid_entropy(&laws[0]);
    let kl = laws[1..]
        .iter()
        .map(|q| grid_kl(q, &laws[0]))
        .collect::<Result<Vec<_>>>()?;
    let (avg_term, r, kl_per_channel) = assemble(kl, entropy, opts.normalization);
    Ok(RedundancyReport {
        epsilon: None,
        time: None,
        kl_per_channel,
        avg_term,
        entropy_term: entropy,
        r,
        method: Method::Grid,
        provenance: Provenance {
            normalization: opts.normalization,
            grids: vec![grid],
            ..Provenance::default()
        },
    })
}

/// `r_t` for the laws transported from `rho0` by each closed-loop flow.
///
/// Gaussian `rho0` is handled in closed form; other initial densities are
/// sampled at the cell centres of a shared grid (d ≤ 2), where differing
/// supports surface as the infinite sentinel. Under
/// [`JacobianConvention::OpenLoopTrace`] each transported function is
/// `c_j = e^{(tr A_j − tr A) t}` times a density and the entropy functionals
/// are evaluated on those unnormalized functions.
pub fn liouville_redundancy<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    rho0: &GeneralDensity<T>,
    t: T,
    opts: &LiouvilleOptions<T>,
) -> Result<RedundancyReport<T>> {
    require_reliable(sys, gains)?;
    if rho0.dim() != sys.dim() {
        return Err(Error::Dimension(format!(
            "initial density of dimension {} for a system of dimension {}",
            rho0.dim(),
            sys.dim()
        )));
    }
    if !(t >= T::zero() && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and nonnegative, got {t}")));
    }
    let modes: Vec<FailureMode> = sys.modes().collect();
    let trace_a = sys.a().trace();
    let scale: Vec<T> = modes
        .iter()
        .map(|&m| {
            let acl = closed_loop_matrix(sys, gains, m)?;
            Ok(match opts.jacobian {
                JacobianConvention::MassConserving => T::one(),
                JacobianConvention::OpenLoopTrace => ((acl.trace() - trace_a) * t).exp(),
            })
        })
        .collect::<Result<_>>()?;

    let (kl, entropy, method, grids, mass) = match rho0 {
        GeneralDensity::Gaussian(g0) => {
            let laws = modes
                .iter()
                .map(|&m| pushforward_gaussian(sys, gains, m, g0, t))
                .collect::<Result<Vec<GaussianDensity<T>>>>()?;
            let entropy = gaussian_entropy(&laws[0])?;
            let kl = laws[1..]
                .iter()
                .map(|q| gaussian_kl(q, &laws[0]).map(Divergence::Finite))
                .collect::<Result<Vec<_>>>()?;
            let mass = if sys.dim() <= 2 {
                let points = if sys.dim() == 1 { opts.points_1d } else { opts.points_2d };
                modes
                    .iter()
                    .map(|&m| {
                        integrate_gaussian_transport(sys, gains, m, g0, t, opts.k_sigma, points, opts.jacobian)
                            .map(|q| q.value)
                    })
                    .collect::<Result<Vec<T>>>()?
            } else {
                scale.clone()
            };
            (kl, entropy, Method::ClosedForm, Vec::new(), mass)
        }
        _ => {
            check_grid_dim(sys, Method::Grid)?;
            let d = sys.dim();
            let flows = modes
                .iter()
                .map(|&m| ModeFlow::new(sys, gains, m, t, JacobianConvention::MassConserving))
                .collect::<Result<Vec<_>>>()?;
            let (slo, shi) = rho0.support_box(opts.k_sigma);
            let mut lo = vec![T::infinity(); d];
            let mut hi = vec![T::neg_infinity(); d];
            for f in &flows {
                let (a, b) = f.image_box(&slo, &shi);
                for k in 0..d {
                    lo[k] = lo[k].min(a[k]);
                    hi[k] = hi[k].max(b[k]);
                }
            }
            let grid = box_grid(lo, hi, cells_for(d, opts.cells_1d, opts.cells_2d))?;
            let mut laws = Vec::with_capacity(flows.len());
            let mut mass = Vec::with_capacity(flows.len());
            for (f, c) in flows.iter().zip(&scale) {
                let values: Vec<T> = (0..grid.len())
                    .map(|cell| f.density_at(rho0, &grid.point(cell)))
                    .collect();
                mass.push(values.iter().copied().sum::<T>() * grid.cell_volume() * *c);
                laws.push(GridDensity::from_unnormalized(grid.clone(), values)?);
            }
            let entropy = grid_entropy(&laws[0]);
            let kl = laws[1..]
                .iter()
                .map(|q| grid_kl(q, &laws[0]))
                .collect::<Result<Vec<_>>>()?;
            (kl, entropy, Method::Grid, vec![grid], mass)
        }
    };

    // Entropy functionals of c·ρ: H → c (H − log₂ c), D → c_i (D + log₂(c_i/c_0)).
    let c0 = scale[0];
    let entropy = Bits(c0 * (entropy.0 - c0.log2()));
    let kl: Vec<Divergence<T>> = kl
        .into_iter()
        .zip(&scale[1..])
        .map(|(k, ci)| match k {
            Divergence::Finite(b) => Divergence::Finite(Bits(*ci * (b.0 + (*ci / c0).log2()))),
            inf => inf,
        })
        .collect();
    let (avg_term, r, kl_per_channel) = assemble(kl, entropy, opts.normalization);
    Ok(RedundancyReport {
        epsilon: None,
        time: Some(t),
        kl_per_channel,
        avg_term,
        entropy_term: entropy,
        r,
        method,
        provenance: Provenance {
            normalization: opts.normalization,
            grids,
            jacobian: Some(opts.jacobian),
            mass_per_mode: mass,
            ..Provenance::default()
        },
    })
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Epsilon,
    Time,
}

/// Change of `r` between adjacent rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStep<T> {
    pub from: T,
    pub to: T,
    pub delta_r: Option<T>,
    /// `Δr / Δlog₂ε` for ε sweeps (bits per doubling), `Δr / Δt` for time.
    pub rate: Option<T>,
    pub nondecreasing: Option<bool>,
}

/// A stated property checked against the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub claim: String,
    pub holds: bool,
    pub violations: usize,
    pub checked: usize,
}

/// Constant-σ decomposition `r(ε) = r(1) − d·log₂ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw<T> {
    pub r_at_unit_epsilon: T,
    pub dimension: usize,
    pub predicted: Vec<T>,
    pub max_abs_deviation: T,
    /// `d` bits lost per doubling of ε: r decreases in ε.
    pub slope_bits_per_doubling: T,
}

/// `r(σ, ε)` at a reference ε compared with each `r_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison<T> {
    pub epsilon: T,
    pub method: Method,
    pub r_reference: Divergence<T>,
    /// Per row: does `r(σ, ε)` exceed `r_t`?
    pub exceeds: Vec<Option<bool>>,
    pub check: ClaimCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable<T> {
    pub parameter: SweepParameter,
    /// One report per parameter value, strictly increasing.
    pub rows: Vec<RedundancyReport<T>>,
    pub steps: Vec<SweepStep<T>>,
    /// Monotonicity of `r` in the swept parameter.
    pub monotonicity: ClaimCheck,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scaling_law: Option<ScalingLaw<T>>,
    /// Closed-form nominal entropy `H(ρ₀) + tr(A_cl) t log₂e` per row.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entropy_transport: Option<Vec<T>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<ReferenceComparison<T>>,
}

impl<T: Real> SweepTable<T> {
    pub fn parameter_values(&self) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| match self.parameter {
                SweepParameter::Epsilon => r.epsilon.unwrap_or_else(T::nan),
                SweepParameter::Time => r.time.unwrap_or_else(T::nan),
            })
            .collect()
    }
}

fn sorted_distinct<T: Real>(values: &[T], what: &str, allow_zero: bool) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(Error::InvalidInput(format!("{what} list is empty")));
    }
    for v in values {
        let ok = v.is_finite() && (*v > T::zero() || (allow_zero && *v == T::zero()));
        if !ok {
            return Err(Error::Domain(format!("invalid {what} value {v}")));
        }
    }
    let mut out = values.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    if out.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput(format!("{what} values must be distinct")));
    }
    Ok(out)
}

fn steps_and_monotonicity<T: Real>(
    params: &[T],
    rows: &[RedundancyReport<T>],
    log_scale: bool,
    claim: &str,
) -> (Vec<SweepStep<T>>, ClaimCheck) {
    let mut steps = Vec::new();
    let mut violations = 0;
    let mut checked = 0;
    for i in 1..rows.len() {
        let (a, b) = (params[i - 1], params[i]);
        let delta = match (rows[i - 1].r.finite(), rows[i].r.finite()) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        let span = if log_scale { b.log2() - a.log2() } else { b - a };
        let nondecreasing = delta.map(|dr| dr >= T::zero());
        if let Some(nd) = nondecreasing {
            checked += 1;
            if !nd {
                violations += 1;
            }
        }
        steps.push(SweepStep {
            from: a,
            to: b,
            delta_r: delta,
            rate: delta.map(|dr| dr / span),
            nondecreasing,
        });
    }
    (
        steps,
        ClaimCheck {
            claim: claim.to_string(),
            holds: violations == 0,
            violations,
            checked,
        },
    )
}

/// `r(σ, ε)` over a list of noise levels. Rows are sorted by increasing ε;
/// each row's Monte Carlo seed is derived from `(seed, row index)`.
pub fn epsilon_sweep<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    eps_list: &[T],
    opts: &RedundancyOptions<T>,
) -> Result<SweepTable<T>> {
    let eps = sorted_distinct(eps_list, "epsilon", false)?;
    require_reliable(sys, gains)?;
    let rows = eps
        .par_iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut row_opts = opts.clone();
            row_opts.seed = derive_seed(opts.seed, i as u64);
            systemic_redundancy(sys, gains, e, &row_opts)
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (steps, monotonicity) = steps_and_monotonicity(
        &eps,
        &rows,
        true,
        "r is nondecreasing in epsilon (r(eps1) <= r(eps2) whenever eps1 <= eps2)",
    );
    let scaling_law = if sys.sigma().is_constant() && opts.method == Method::ClosedForm {
        let unit = systemic_redundancy(sys, gains, T::one(), opts)?.r.expect_finite();
        let d = T::from_usize_lossy(sys.dim());
        let predicted: Vec<T> = eps.iter().map(|e| unit - d * e.log2()).collect();
        let max_abs_deviation = rows
            .iter()
            .zip(&predicted)
            .map(|(r, p)| (r.r.expect_finite() - *p).abs())
            .fold(T::zero(), T::max);
        Some(ScalingLaw {
            r_at_unit_epsilon: unit,
            dimension: sys.dim(),
            predicted,
            max_abs_deviation,
            slope_bits_per_doubling: -d,
        })
    } else {
        None
    };
    Ok(SweepTable {
        parameter: SweepParameter::Epsilon,
        rows,
        steps,
        monotonicity,
        scaling_law,
        entropy_transport: None,
        reference: None,
    })
}

/// `r_t` over a list of times, optionally compared with `r(σ, ε)` at
/// `reference_eps` (computed with `reference_opts`).
pub fn time_sweep<T: Real>(
    sys: &MultiChannelSystem<T>,
    gains: &GainSet<T>,
    rho0: &GeneralDensity<T>,
    t_list: &[T],
    opts: &LiouvilleOptions<T>,
    reference: Option<(T, &RedundancyOptions<T>)>,
) -> Result<SweepTable<T>> {
    let times = sorted_distinct(t_list, "time", true)?;
    require_reliable(sys, gains)?;
    let rows = times
        .par_iter()
        .map(|&t| liouville_redundancy(sys, gains, rho0, t, opts))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (steps, monotonicity) =
        steps_and_monotonicity(&times, &rows, false, "r_t is nondecreasing in t");
    let entropy_transport = match rho0 {
        GeneralDensity::Gaussian(g0) if opts.jacobian == JacobianConvention::MassConserving => {
            let h0 = gaussian_entropy(g0)?.0;
            let tr = closed_loop_matrix(sys, gains, FailureMode::NOMINAL)?.trace();
            Some(times.iter().map(|t| h0 + tr * *t * T::LOG2_E()).collect())
        }
        _ => None,
    };
    let reference = match reference {
        Some((eps, ropts)) => {
            let r_ref = systemic_redundancy(sys, gains, eps, ropts)?.r;
            let method = ropts.method;
            let exceeds: Vec<Option<bool>> = rows
                .iter()
                .map(|row| match (r_ref.finite(), row.r.finite()) {
                    (Some(a), Some(b)) => Some(a > b),
                    _ => None,
                })
                .collect();
            let checked = exceeds.iter().flatten().count();
            let violations = exceeds.iter().flatten().filter(|v| !**v).count();
            Some(ReferenceComparison {
                epsilon: eps,
                method,
                r_reference: r_ref,
                exceeds,
                check: ClaimCheck {
                    claim: "r(sigma, eps) > r_t for every t >= 0".into(),
                    holds: violations == 0,
                    violations,
                    checked,
                },
            })
        }
        None => None,
    };
    Ok(SweepTable {
        parameter: SweepParameter::Time,
        rows,
        steps,
        monotonicity,
        scaling_law: None,
        entropy_transport,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::system::DiffusionSpec;

    fn m(v: f64) -> Matrix<f64> {
        Matrix::from_rows(vec![vec![v]]).unwrap()
    }

    fn s1() -> (MultiChannelSystem<f64>, GainSet<f64>) {
        let sys = MultiChannelSystem::new(
            m(1.0),
            vec![m(1.0), m(1.0)],
            DiffusionSpec::constant(m(1.0)).unwrap(),
        )
        .unwrap();
        (sys, GainSet::new(vec![m(-2.0), m(-2.0)]))
    }

    #[test]
    fn s1_closed_form() {
        let (sys, k) = s1();
        let r = systemic_redundancy(&sys, &k, 0.1, &RedundancyOptions::default()).unwrap();
        let kl = 0.5 * (2.0 - 3f64.ln()) / 2f64.ln();
        for c in &r.kl_per_channel {
            assert!((c.expect_finite() - kl).abs() < 1e-14);
        }
        assert!((r.avg_term.expect_finite() - kl / 2.0).abs() < 1e-14);
        assert!((r.r.expect_finite() - 2.8924).abs() < 1e-4);
        assert_eq!(
            r.r.expect_finite(),
            r.avg_term.expect_finite() - r.entropy_term.0
        );
        let r1 = systemic_redundancy(&sys, &k, 1.0, &RedundancyOptions::default()).unwrap();
        assert!((r1.r.expect_finite() + 0.4296).abs() < 1e-4);
    }

    #[test]
    fn unreliable_is_rejected() {
        let sys = MultiChannelSystem::new(
            m(1.0),
            vec![m(1.0)],
            DiffusionSpec::constant(m(1.0)).unwrap(),
        )
        .unwrap();
        let k = GainSet::new(vec![m(-2.0)]);
        assert!(matches!(
            systemic_redundancy(&sys, &k, 0.1, &RedundancyOptions::default()),
            Err(Error::NotReliable { .. })
        ));
    }

    #[test]
    fn mean_normalization_doubles_average() {
        let (sys, k) = s1();
        let half = systemic_redundancy(&sys, &k, 0.3, &RedundancyOptions::default()).unwrap();
        let opts = RedundancyOptions {
            normalization: AvgNormalization::Mean,
            ..RedundancyOptions::default()
        };
        let mean = systemic_redundancy(&sys, &k, 0.3, &opts).unwrap();
        assert!((mean.avg_term.expect_finite() - 2.0 * half.avg_term.expect_finite()).abs() < 1e-15);
    }

    #[test]
    fn grid_method_tracks_closed_form() {
        let (sys, k) = s1();
        let opts = RedundancyOptions {
            method: Method::Grid,
            ..RedundancyOptions::default()
        };
        let g = systemic_redundancy(&sys, &k, 0.1, &opts).unwrap();
        assert!((g.r.expect_finite() - 2.8924).abs() < 5e-3, "{:?}", g.r);
    }

    #[test]
    fn liouville_closed_form_values() {
        let (sys, k) = s1();
        let rho0 = GeneralDensity::Gaussian(GaussianDensity::standard(1));
        let opts = LiouvilleOptions::default();
        let r0 = liouville_redundancy(&sys, &k, &rho0, 0.0, &opts).unwrap();
        assert!((r0.r.expect_finite() + 2.047095585180641).abs() < 1e-12);
        let r = liouville_redundancy(&sys, &k, &rho0, 0.5, &opts).unwrap();
        assert!((r.r.expect_finite() - 1.7000).abs() < 1e-3);
        for mass in &r.provenance.mass_per_mode {
            assert!((mass - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_initial_density_gives_infinite_divergence() {
        let (sys, k) = s1();
        let rho0 = GeneralDensity::uniform(vec![-1.0], vec![1.0]).unwrap();
        let r = liouville_redundancy(&sys, &k, &rho0, 0.5, &LiouvilleOptions::default()).unwrap();
        assert!(!r.r.is_finite());
        assert_eq!(r.method, Method::Grid);
        assert!((r.provenance.mass_per_mode[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn epsilon_sweep_law_and_flags() {
        let (sys, k) = s1();
        let t = epsilon_sweep(&sys, &k, &[1.0, 0.5, 0.1], &RedundancyOptions::default()).unwrap();
        assert_eq!(t.parameter_values(), vec![0.1, 0.5, 1.0]);
        let law = t.scaling_law.as_ref().unwrap();
        assert!(law.max_abs_deviation < 1e-12);
        assert!(!t.monotonicity.holds);
        assert_eq!(t.monotonicity.violations, 2);
        for s in &t.steps {
            assert!((s.rate.unwrap() + 1.0).abs() < 1e-9);
        }
        assert!(epsilon_sweep(&sys, &k, &[1.0, 1.0], &RedundancyOptions::default()).is_err());
    }

    #[test]
    fn time_sweep_entropy_transport() {
        let (sys, k) = s1();
        let rho0 = GeneralDensity::Gaussian(GaussianDensity::standard(1));
        let opts = LiouvilleOptions::default();
        let ropts = RedundancyOptions::default();
        let t = time_sweep(&sys, &k, &rho0, &[0.5, 0.0, 2.0], &opts, Some((0.1, &ropts))).unwrap();
        let h = t.entropy_transport.as_ref().unwrap();
        for (row, want) in t.rows.iter().zip(h) {
            assert!((row.entropy_term.0 - want).abs() < 1e-12);
        }
        assert!(t.monotonicity.holds);
        let reference = t.reference.as_ref().unwrap();
        assert_eq!(reference.exceeds.len(), 3);
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
