//! Command dispatch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{EpsilonSpec, ProblemSpec};
use super::report::{
    canonical_json, render_csv, write_atomic, CommandEcho, ModeFpGrid, ModeSimulation, ReportFile,
    ReportOutput, ToolInfo, SCHEMA_VERSION,
};
use super::{exit, CliError};
use crate::grid::{GridDensity, GridSpec};
use crate::liouville::{GaussianDensity, GeneralDensity, JacobianConvention};
use crate::redundancy::{
    derive_seed, epsilon_sweep, systemic_redundancy, time_sweep, AvgNormalization,
    LiouvilleOptions, Method, RedundancyOptions,
};
use crate::reliable::{require_reliable, synthesize_gains, verify_reliable};
use crate::stochastic::{
    default_dt, default_fp_box, default_horizon, simulate_sde_from, solve_stationary_fp_grid,
    stationary_gaussian,
};
use crate::system::{closed_loop_matrix, GainSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Verify,
    Synth,
    Redundancy,
    SweepEps,
    SweepTime,
    Simulate,
    FpGrid,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Synth => "synth",
            Self::Redundancy => "redundancy",
            Self::SweepEps => "sweep-eps",
            Self::SweepTime => "sweep-time",
            Self::Simulate => "simulate",
            Self::FpGrid => "fp-grid",
        }
    }
}

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub paper_literal_jacobian: bool,
    pub avg_normalization: Option<AvgNormalization>,
    /// Record wall-clock time (breaks byte-identity between runs).
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    /// Message for stderr when `exit_code` is nonzero.
    pub diagnostic: Option<String>,
}

struct Resolved<'a> {
    spec: &'a ProblemSpec,
    method: Method,
    seed: u64,
    normalization: AvgNormalization,
    jacobian: JacobianConvention,
}

impl Resolved<'_> {
    fn gains(&self, cmd: Command) -> Result<&GainSet<f64>, CliError> {
        self.spec.gains.as_ref().ok_or_else(|| {
            CliError::invalid(
                "gains",
                format!("`{}` needs gains; run `synth` and copy its gains into the config", cmd.name()),
            )
        })
    }

    fn single_epsilon(&self, cmd: Command) -> Result<f64, CliError> {
        match &self.spec.epsilon {
            Some(EpsilonSpec::Single(e)) => Ok(*e),
            Some(EpsilonSpec::List(v)) if v.len() == 1 => Ok(v[0]),
            Some(EpsilonSpec::List(_)) => Err(CliError::invalid(
                "epsilon",
                format!("`{}` takes a single epsilon", cmd.name()),
            )),
            None => Err(CliError::invalid("epsilon", format!("`{}` needs epsilon", cmd.name()))),
        }
    }

    fn redundancy_options(&self) -> RedundancyOptions<f64> {
        RedundancyOptions {
            method: self.method,
            normalization: self.normalization,
            seed: self.seed,
            monte_carlo: self.spec.monte_carlo.clone(),
            grid: self.spec.grid.clone(),
        }
    }
}

fn hex_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `cmd`, writing `<out_dir>/<cmd>.json` (and `.csv` for sweeps).
///
/// A gain set that fails verification still produces a report; the outcome
/// then carries exit code 2. Other failures are returned as errors.
pub fn run_command(
    cmd: Command,
    spec: &ProblemSpec,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome, CliError> {
    let r = Resolved {
        spec,
        method: opts.method.unwrap_or(spec.method),
        seed: opts.seed.unwrap_or(spec.seed),
        normalization: opts.avg_normalization.unwrap_or(spec.avg_normalization),
        jacobian: if opts.paper_literal_jacobian {
            JacobianConvention::OpenLoopTrace
        } else {
            JacobianConvention::MassConserving
        },
    };
    let echo = CommandEcho {
        command: cmd.name().into(),
        method: r.method,
        seed: r.seed,
        avg_normalization: match r.normalization {
            AvgNormalization::HalfN => "paper".into(),
            AvgNormalization::Mean => "mean".into(),
        },
        paper_literal_jacobian: opts.paper_literal_jacobian,
    };

    let started = Instant::now();
    let (method, output, mut exit_code, diagnostic) = execute(cmd, &r)?;
    let elapsed = started.elapsed().as_secs_f64();

    let echo_json = canonical_json(&serde_json::to_value(&echo).expect("echo serializes"));
    let report = ReportFile {
        schema_version: SCHEMA_VERSION.into(),
        tool: ToolInfo::current(),
        command: echo,
        inputs_digest: hex_digest(&[&spec.canonical, &echo_json]),
        method,
        output,
        wall_clock_seconds: opts.timing.then_some(elapsed),
    };

    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();
    let json_path = out_dir.join(format!("{}.json", cmd.name()));
    write_atomic(&json_path, &report.to_canonical())?;
    files.push(json_path);
    if let ReportOutput::Sweep(table) = &report.output {
        let csv_path = out_dir.join(format!("{}.csv", cmd.name()));
        write_atomic(&csv_path, &render_csv(table))?;
        files.push(csv_path);
    }
    if diagnostic.is_none() {
        exit_code = exit::OK;
    }
    Ok(RunOutcome {
        exit_code,
        files,
        diagnostic,
    })
}

type Executed = (Method, ReportOutput, i32, Option<String>);

fn execute(cmd: Command, r: &Resolved<'_>) -> Result<Executed, CliError> {
    let sys = &r.spec.system;
    let done = |method, output| Ok((method, output, exit::OK, None));
    match cmd {
        Command::Verify => {
            let report = verify_reliable(sys, r.gains(cmd)?)?;
            if report.reliable {
                done(Method::ClosedForm, ReportOutput::Reliability(report))
            } else {
                let msg = format!(
                    "gain set is not reliable (spectral abscissae {:?})",
                    report.abscissae
                );
                Ok((Method::ClosedForm, ReportOutput::Reliability(report), exit::NOT_RELIABLE, Some(msg)))
            }
        }
        Command::Synth => {
            let synthesis = synthesize_gains(sys, &r.spec.synthesis)?;
            done(Method::ClosedForm, ReportOutput::Synthesis(synthesis))
        }
        Command::Redundancy => {
            let eps = r.single_epsilon(cmd)?;
            let report = systemic_redundancy(sys, r.gains(cmd)?, eps, &r.redundancy_options())?;
            done(report.method, ReportOutput::Redundancy(report))
        }
        Command::SweepEps => {
            let eps = r
                .spec
                .epsilon
                .as_ref()
                .ok_or_else(|| CliError::invalid("epsilon", "`sweep-eps` needs a list of epsilon values"))?
                .values();
            let table = epsilon_sweep(sys, r.gains(cmd)?, &eps, &r.redundancy_options())?;
            done(r.method, ReportOutput::Sweep(table))
        }
        Command::SweepTime => {
            let times = r
                .spec
                .times
                .as_ref()
                .ok_or_else(|| CliError::invalid("times", "`sweep-time` needs a list of times"))?;
            let rho0 = r
                .spec
                .rho0
                .clone()
                .unwrap_or_else(|| GeneralDensity::Gaussian(GaussianDensity::standard(sys.dim())));
            let lopts = LiouvilleOptions {
                jacobian: r.jacobian,
                normalization: r.normalization,
                ..LiouvilleOptions::default()
            };
            let ropts = r.redundancy_options();
            let reference = match &r.spec.epsilon {
                None => None,
                Some(_) => Some((r.single_epsilon(cmd)?, &ropts)),
            };
            let table = time_sweep(sys, r.gains(cmd)?, &rho0, times, &lopts, reference)?;
            let method = table.rows.first().map_or(Method::ClosedForm, |row| row.method);
            done(method, ReportOutput::Sweep(table))
        }
        Command::Simulate => {
            let eps = r.single_epsilon(cmd)?;
            let gains = r.gains(cmd)?;
            let mc = &r.spec.monte_carlo;
            let x0 = r.spec.x0.clone().unwrap_or_else(|| vec![0.0; sys.dim()]);
            let mut modes = Vec::new();
            for mode in sys.modes() {
                let acl = closed_loop_matrix(sys, gains, mode)?;
                let dt = mc.dt.unwrap_or_else(|| default_dt(&acl));
                let horizon = match mc.horizon {
                    Some(h) => h,
                    None => default_horizon(&acl)?,
                };
                let seed = derive_seed(r.seed, mode.index() as u64);
                let set = simulate_sde_from(sys, gains, mode, eps, horizon, dt, mc.n_paths, seed, &x0)?;
                let covariance = set.covariance();
                let stationary = if sys.sigma().is_constant() {
                    Some(stationary_gaussian(sys, gains, mode, eps)?.cov)
                } else {
                    None
                };
                let max_err = stationary.as_ref().map(|p| {
                    (0..sys.dim())
                        .map(|i| (covariance[(i, i)] / p[(i, i)] - 1.0).abs())
                        .fold(0.0, f64::max)
                });
                modes.push(ModeSimulation {
                    mode,
                    seed,
                    n_paths: set.len(),
                    dt: set.dt,
                    t_final: set.t_final,
                    epsilon: eps,
                    mean: set.mean(),
                    covariance,
                    stationary_covariance: stationary,
                    max_relative_variance_error: max_err,
                });
            }
            done(Method::MonteCarlo, ReportOutput::Simulation(modes))
        }
        Command::FpGrid => {
            let eps = r.single_epsilon(cmd)?;
            let gains = r.gains(cmd)?;
            if sys.dim() > 2 {
                return Err(CliError::invalid("A", "`fp-grid` supports dimension 1 or 2"));
            }
            require_reliable(sys, gains)?;
            let g = &r.spec.grid;
            let cells = r
                .spec
                .grid_cells
                .unwrap_or(if sys.dim() == 1 { g.cells_1d } else { g.cells_2d });
            let mut modes = Vec::new();
            for mode in sys.modes() {
                let grid = match &g.bounds {
                    Some((lo, hi)) => GridSpec::uniform(lo.clone(), hi.clone(), cells)?,
                    None => default_fp_box(sys, gains, mode, eps, g.k_sigma, cells)?,
                };
                let density = solve_stationary_fp_grid(sys, gains, mode, eps, &grid)?;
                let l1 = if sys.sigma().is_constant() {
                    let gauss = stationary_gaussian(sys, gains, mode, eps)?;
                    let reference = GridDensity::from_fn(grid.clone(), |x| gauss.pdf(x))?;
                    Some(density.l1_distance(&reference)?)
                } else {
                    None
                };
                modes.push(ModeFpGrid {
                    mode,
                    epsilon: eps,
                    mean: density.mean(),
                    covariance: density.covariance(),
                    l1_to_gaussian: l1,
                    grid,
                    values: density.values,
                });
            }
            done(Method::Grid, ReportOutput::FpGrid(modes))
        }
    }
}
