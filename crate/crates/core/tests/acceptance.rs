//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use redunquant::cli::{read_report, ReportOutput};
use redunquant::grid::{GridDensity, GridSpec};
use redunquant::info::{gaussian_entropy, gaussian_kl, grid_entropy, grid_kl};
use redunquant::liouville::{integrate_gaussian_transport, GeneralDensity, JacobianConvention};
use redunquant::redundancy::{
    epsilon_sweep, liouville_redundancy, systemic_redundancy, LiouvilleOptions, RedundancyOptions,
};
use redunquant::reliable::{synthesize_gains, verify_reliable, SynthesisOptions};
use redunquant::stochastic::{
    fp_residual, simulate_sde, solve_stationary_fp_grid, stationary_gaussian, FpDensity,
};
use redunquant::system::{solve_lyapunov, DiffusionSpec};
use redunquant::{Error, FailureMode, Gains, Gaussian, Mat, System};

const BIN: &str = env!("CARGO_BIN_EXE_redunquant");

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `ẋ = a x + u`, one channel with zero gain, σ = 1.
fn scalar_ou(a: f64) -> (System, Gains) {
    let sys = System::new(
        mat(&[&[a]]),
        vec![mat(&[&[1.0]])],
        DiffusionSpec::constant(mat(&[&[1.0]])).unwrap(),
    )
    .unwrap();
    (sys, Gains::new(vec![mat(&[&[0.0]])]))
}

fn random_gaussian(r: &mut ChaCha8Rng, d: usize) -> Gaussian {
    let m = uniform_matrix(r, d, d, 1.0);
    let cov = from_na(&(to_na(&m) * to_na(&m).transpose() + DMatrix::identity(d, d) * 0.1));
    let mean = uniform_matrix(r, d, 1, 1.0).as_slice().to_vec();
    Gaussian::new(mean, cov).unwrap()
}

fn c1_reliability_oracle() -> Outcome {
    let mut r = rng(1);
    let mut disagreements = 0;
    let mut reliable = 0;
    for _ in 0..1000 {
        let d = r.random_range(1..=4);
        let n = r.random_range(1..=3);
        let a = uniform_matrix(&mut r, d, d, 2.0);
        let widths: Vec<usize> = (0..n).map(|_| r.random_range(1..=2)).collect();
        let b: Vec<Mat> = widths.iter().map(|&m| uniform_matrix(&mut r, d, m, 2.0)).collect();
        let k: Vec<Mat> = widths.iter().map(|&m| uniform_matrix(&mut r, m, d, 3.0)).collect();
        let sys = System::new(a.clone(), b.clone(), DiffusionSpec::constant(Mat::identity(d)).unwrap())
            .map_err(|e| e.to_string())?;
        let rep = verify_reliable(&sys, &Gains::new(k.clone())).map_err(|e| e.to_string())?;
        if rep.reliable != oracle_reliable(&a, &b, &k) {
            disagreements += 1;
        }
        reliable += rep.reliable as usize;
    }
    check(disagreements == 0, format!("{disagreements} disagreements"))?;
    Ok(format!("1000 instances, 0 disagreements ({reliable} reliable)"))
}

fn c2_lyapunov_residual() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = r.random_range(1..=8);
        let a = random_stable(&mut r, d);
        let g = uniform_matrix(&mut r, d, d, 1.0);
        let q = from_na(&(to_na(&g) * to_na(&g).transpose() + DMatrix::identity(d, d) * 0.1));
        let p = solve_lyapunov(&a, &q).map_err(|e| e.to_string())?;
        let (na, np, nq) = (to_na(&a), to_na(&p), to_na(&q));
        let res = (&na * &np + &np * na.transpose() + &nq).norm();
        let bound = 1e-10 * (1.0 + nq.norm() + na.norm() * np.norm());
        worst = worst.max(res / bound);
    }
    check(worst <= 1.0, format!("residual reached {worst:.3} of the bound"))?;
    Ok(format!("200 instances, worst residual {worst:.2e} of the bound"))
}

fn c3_ou_triple() -> Outcome {
    let (sys, k) = scalar_ou(-1.0);
    let nominal = FailureMode::NOMINAL;
    let g = stationary_gaussian(&sys, &k, nominal, 1.0).map_err(|e| e.to_string())?;
    let var = g.cov[(0, 0)];
    check((var - 0.5).abs() < 1e-14, format!("closed-form variance {var}"))?;

    let set = simulate_sde(&sys, &k, nominal, 1.0, 20.0, 1e-3, 200_000, 42).map_err(|e| e.to_string())?;
    let mc = set.covariance()[(0, 0)];
    let rel = (mc / 0.5 - 1.0).abs();
    check(rel < 0.03, format!("Monte Carlo variance {mc} ({:.2}% off)", rel * 100.0))?;

    let grid = GridSpec::uniform(vec![-6.0], vec![6.0], 801).unwrap();
    let rho = solve_stationary_fp_grid(&sys, &k, nominal, 1.0, &grid).map_err(|e| e.to_string())?;
    let exact = GridDensity::from_fn(grid, |x| g.pdf(x)).unwrap();
    let l1 = rho.l1_distance(&exact).unwrap();
    check(l1 < 1e-3, format!("grid L1 {l1}"))?;
    Ok(format!("variance 0.5 / MC {mc:.5} ({:.2}%) / grid L1 {l1:.2e}", rel * 100.0))
}

fn c4_fp_residual_rate() -> Outcome {
    let (sys, k) = scalar_ou(-1.0);
    let g = stationary_gaussian(&sys, &k, FailureMode::NOMINAL, 1.0).unwrap();
    let res = |h: f64| {
        let n = (8.0 / h).round() as usize;
        let grid = GridSpec::uniform(vec![-4.0], vec![4.0], n).unwrap();
        fp_residual(FpDensity::Gaussian(&g), &sys, &k, FailureMode::NOMINAL, 1.0, &grid).unwrap()
    };
    let r: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|h| res(*h)).collect();
    let ratios = [r[0] / r[1], r[1] / r[2]];
    for q in ratios {
        check((2.5..=6.0).contains(&q), format!("halving ratio {q:.3} (residuals {r:?})"))?;
    }

    // A coupled 2D loop with anisotropic noise.
    let sys2 = System::new(
        mat(&[&[-1.0, 0.4], &[-0.3, -1.5]]),
        vec![Mat::identity(2)],
        DiffusionSpec::constant(mat(&[&[1.0, 0.0], &[0.3, 0.8]])).unwrap(),
    )
    .unwrap();
    let k2 = Gains::new(vec![Mat::zeros(2, 2)]);
    let g2 = stationary_gaussian(&sys2, &k2, FailureMode::NOMINAL, 1.0).unwrap();
    let res2 = |h: f64| {
        let n = (6.0 / h).round() as usize;
        let grid = GridSpec::uniform(vec![-3.0, -3.0], vec![3.0, 3.0], n).unwrap();
        fp_residual(FpDensity::Gaussian(&g2), &sys2, &k2, FailureMode::NOMINAL, 1.0, &grid).unwrap()
    };
    let r2: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|h| res2(*h)).collect();
    let ratios2 = [r2[0] / r2[1], r2[1] / r2[2]];
    for q in ratios2 {
        check((2.5..=6.0).contains(&q), format!("2D halving ratio {q:.3} (residuals {r2:?})"))?;
    }
    Ok(format!(
        "1D ratios {:.3}, {:.3}; 2D ratios {:.3}, {:.3}",
        ratios[0], ratios[1], ratios2[0], ratios2[1]
    ))
}

fn c5_information_measures() -> Outcome {
    let mut worst: f64 = 0.0;
    // 1D: crate grid estimators and an independent midpoint sum.
    for (mq, vq, mp, vp) in [(0.0, 0.5, 0.0, 1.0), (0.3, 2.0, -0.2, 0.7), (0.0, 3.0, 0.0, 1.0)] {
        let q = Gaussian::new(vec![mq], Mat::from_diagonal(&[vq])).unwrap();
        let p = Gaussian::new(vec![mp], Mat::from_diagonal(&[vp])).unwrap();
        let half = 10.0 * vq.max(vp).sqrt() + 1.0;
        let grid = GridSpec::uniform(vec![-half], vec![half], 4000).unwrap();
        let gq = GridDensity::from_fn(grid.clone(), |x| q.pdf(x)).unwrap();
        let gp = GridDensity::from_fn(grid, |x| p.pdf(x)).unwrap();
        let h = gaussian_entropy(&q).unwrap().0;
        let kl = gaussian_kl(&q, &p).unwrap().0;
        worst = worst
            .max((grid_entropy(&gq).0 - h).abs())
            .max((grid_kl(&gq, &gp).unwrap().expect_finite() - kl).abs())
            .max((quad_entropy_1d(vq, 4000) - h).abs())
            .max((quad_kl_1d(mq, vq, mp, vp, 4000) - kl).abs());
    }
    // 2D.
    let cov = [[1.0, 0.4], [0.4, 0.5]];
    let q = Gaussian::centered(mat(&[&cov[0], &cov[1]])).unwrap();
    let p = Gaussian::new(vec![0.2, -0.1], mat(&[&[1.5, 0.0], &[0.0, 0.8]])).unwrap();
    let grid = GridSpec::uniform(vec![-8.0, -8.0], vec![8.0, 8.0], 400).unwrap();
    let gq = GridDensity::from_fn(grid.clone(), |x| q.pdf(x)).unwrap();
    let gp = GridDensity::from_fn(grid, |x| p.pdf(x)).unwrap();
    let h = gaussian_entropy(&q).unwrap().0;
    worst = worst
        .max((grid_entropy(&gq).0 - h).abs())
        .max((grid_kl(&gq, &gp).unwrap().expect_finite() - gaussian_kl(&q, &p).unwrap().0).abs())
        .max((quad_entropy_2d(cov, 600) - h).abs());
    check(worst < 1e-3, format!("quadrature deviation {worst:.3e} bits"))?;

    let mut r = rng(5);
    for _ in 0..500 {
        let d = r.random_range(1..=4);
        let q = random_gaussian(&mut r, d);
        let p = random_gaussian(&mut r, d);
        let kl = gaussian_kl(&q, &p).unwrap().0;
        check(kl > 0.0, format!("KL {kl} for distinct Gaussians"))?;
        let zero = gaussian_kl(&q, &q).unwrap().0;
        check(zero.abs() < 1e-12, format!("KL(q, q) = {zero}"))?;
    }
    Ok(format!("worst quadrature deviation {worst:.2e} bits; 500 pairs nonnegative"))
}

fn run_cli(dir: &std::path::Path, config: &serde_json::Value, args: &[&str], threads: Option<usize>) -> Result<std::path::PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--config").arg(&cfg).arg("--out").arg(&out);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t.to_string());
    }
    let res = cmd.output().map_err(|e| e.to_string())?;
    check(
        res.status.success(),
        format!("exit {:?}: {}", res.status.code(), String::from_utf8_lossy(&res.stderr)),
    )?;
    Ok(out)
}

fn s1_json() -> serde_json::Value {
    json!({
        "schema_version": "1",
        "system": { "A": [[1.0]], "B": [[[1.0]], [[1.0]]], "sigma": { "kind": "constant", "S": [[1.0]] } },
        "gains": [[[-2.0]], [[-2.0]]],
        "epsilon": 0.1
    })
}

fn redundancy_r(out: &std::path::Path) -> Result<f64, String> {
    match read_report(&out.join("redundancy.json")).map_err(|e| e.to_string())?.output {
        ReportOutput::Redundancy(rep) => Ok(rep.r.expect_finite()),
        other => Err(format!("unexpected output {other:?}")),
    }
}

fn c6_end_to_end_s1() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let want = s1_r(0.1);
    check((want - 2.8924).abs() < 1e-4, format!("hand formula gives {want}"))?;
    let closed = redundancy_r(&run_cli(&tmp.path().join("cf"), &s1_json(), &["redundancy"], None)?)?;
    check((closed - 2.8924).abs() < 1e-3, format!("closed form r = {closed}"))?;

    // Explicit step and horizon: six slowest time constants leave a relative
    // variance deficit of e^{-12}, and dt = 2e-3 biases the variance by at
    // most 0.3%.
    let mut cfg = s1_json();
    cfg["monte_carlo"] = json!({ "n_paths": 200000, "dt": 2e-3, "horizon": 6.0 });
    let mc = redundancy_r(&run_cli(&tmp.path().join("mc"), &cfg, &["redundancy", "--method", "monte_carlo"], None)?)?;
    check((mc - 2.8924).abs() < 0.05, format!("Monte Carlo r = {mc}"))?;
    Ok(format!("closed form {closed:.6}, Monte Carlo {mc:.4} (target 2.8924)"))
}

fn c7_eps_scaling_law() -> Outcome {
    let mut r = rng(7);
    let opts = RedundancyOptions::default();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = r.random_range(1..=3);
        let n = r.random_range(2..=3);
        let (sys, k) = random_reliable(&mut r, d, n);
        let eps = r.random_range(0.01..2.0);
        let a = systemic_redundancy(&sys, &k, eps, &opts).map_err(|e| e.to_string())?;
        let b = systemic_redundancy(&sys, &k, eps / 2.0, &opts).map_err(|e| e.to_string())?;
        let shift = b.r.expect_finite() - a.r.expect_finite();
        worst = worst.max((shift - d as f64).abs());

        let table = epsilon_sweep(&sys, &k, &[eps, eps / 2.0, eps / 4.0], &opts).map_err(|e| e.to_string())?;
        check(!table.monotonicity.holds && table.monotonicity.violations == 2, "sweep does not flag the decrease")?;
        let law = table.scaling_law.as_ref().ok_or("no scaling-law annotation")?;
        check(law.slope_bits_per_doubling == -(d as f64), "wrong slope annotation")?;
        check(table.steps.iter().all(|s| s.nondecreasing == Some(false)), "step flags")?;
    }
    check(worst < 1e-9, format!("r(eps/2) - r(eps) - d reached {worst:.3e}"))?;
    Ok(format!("20 instances, |r(eps/2) - r(eps) - d| <= {worst:.2e}; decrease flagged against the nondecreasing claim"))
}

fn c8_liouville_trajectory() -> Outcome {
    let mut r = rng(8);
    let lopts = LiouvilleOptions::default();
    let mut worst_r0: f64 = 0.0;
    for _ in 0..20 {
        let d = r.random_range(1..=3);
        let (sys, k) = random_reliable(&mut r, d, 2);
        let g0 = random_gaussian(&mut r, d);
        let h = gaussian_entropy(&g0).unwrap().0;
        let rep = liouville_redundancy(&sys, &k, &GeneralDensity::Gaussian(g0), 0.0, &lopts)
            .map_err(|e| e.to_string())?;
        worst_r0 = worst_r0.max((rep.r.expect_finite() + h).abs());
    }
    check(worst_r0 < 1e-6, format!("|r_0 + H| reached {worst_r0}"))?;

    let (sys, k) = s1();
    let rho0 = GeneralDensity::Gaussian(Gaussian::standard(1));
    let rt = liouville_redundancy(&sys, &k, &rho0, 0.5, &lopts).map_err(|e| e.to_string())?.r.expect_finite();
    check((rt - 1.7000).abs() < 1e-3, format!("r_t(0.5) = {rt}"))?;
    check((rt - s1_r_t(0.5)).abs() < 1e-10, format!("r_t(0.5) = {rt} vs hand formula {}", s1_r_t(0.5)))?;

    // Mass of every mode's transported density, by quadrature in the
    // whitened coordinates of its law and as reported by the redundancy run.
    let mut worst_mass: f64 = 0.0;
    let (sys2, k2) = random_reliable(&mut r, 2, 2);
    let g2 = random_gaussian(&mut r, 2);
    let g1 = Gaussian::standard(1);
    for t in [0.0, 0.5, 1.0, 2.0] {
        for (s, kk, g, points) in [(&sys, &k, &g1, 801), (&sys2, &k2, &g2, 201)] {
            for mode in s.modes() {
                let q = integrate_gaussian_transport(s, kk, mode, g, t, 8.0, points, JacobianConvention::MassConserving)
                    .map_err(|e| e.to_string())?;
                worst_mass = worst_mass.max((q.value - 1.0).abs());
            }
            let rep = liouville_redundancy(s, kk, &GeneralDensity::Gaussian(g.clone()), t, &lopts)
                .map_err(|e| e.to_string())?;
            for m in &rep.provenance.mass_per_mode {
                worst_mass = worst_mass.max((m - 1.0).abs());
            }
        }
    }
    check(worst_mass < 1e-6, format!("mass deviation {worst_mass:.3e}"))?;
    Ok(format!("|r_0 + H| <= {worst_r0:.1e}, r_t(0.5) = {rt:.6}, mass deviation {worst_mass:.1e}"))
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = s1_json();
    cfg["epsilon"] = json!([0.05, 0.1, 0.2, 0.5, 1.0]);
    let mut runs = Vec::new();
    for (i, threads) in [1, 4, 1, 8].into_iter().enumerate() {
        let out = run_cli(&tmp.path().join(format!("cf{i}")), &cfg, &["sweep-eps"], Some(threads))?;
        runs.push(std::fs::read(out.join("sweep-eps.json")).map_err(|e| e.to_string())?);
        runs.push(std::fs::read(out.join("sweep-eps.csv")).map_err(|e| e.to_string())?);
    }
    check(runs.chunks(2).all(|c| c == &runs[0..2]), "closed-form sweeps differ")?;

    cfg["monte_carlo"] = json!({ "n_paths": 20000, "dt": 5e-3, "horizon": 6.0 });
    let mut mc = Vec::new();
    for (i, threads) in [1, 4].into_iter().enumerate() {
        let out = run_cli(
            &tmp.path().join(format!("mc{i}")),
            &cfg,
            &["sweep-eps", "--method", "monte_carlo", "--seed", "9"],
            Some(threads),
        )?;
        mc.push(std::fs::read(out.join("sweep-eps.json")).map_err(|e| e.to_string())?);
    }
    check(mc[0] == mc[1], "Monte Carlo sweeps differ across thread counts")?;
    Ok("closed-form sweeps identical at 1/4/1/8 threads; Monte Carlo sweeps identical at 1/4 threads".into())
}

fn c10_synthesis_soundness() -> Outcome {
    let mut r = rng(10);
    let (mut successes, mut tried) = (0, 0);
    for _ in 0..60 {
        let d = r.random_range(1..=3);
        let n = r.random_range(2..=3);
        let a = uniform_matrix(&mut r, d, d, 2.0);
        let b: Vec<Mat> = (0..n).map(|_| uniform_matrix(&mut r, d, d, 2.0)).collect();
        let sys = System::new(a.clone(), b.clone(), DiffusionSpec::constant(Mat::identity(d)).unwrap()).unwrap();
        tried += 1;
        match synthesize_gains(&sys, &SynthesisOptions::default()) {
            Ok(s) => {
                successes += 1;
                let rep = verify_reliable(&sys, &s.gains).map_err(|e| e.to_string())?;
                check(rep.reliable, "a synthesized gain set failed verification")?;
                check(oracle_reliable(&a, &b, s.gains.gains()), "a synthesized gain set failed the oracle")?;
            }
            Err(Error::SynthesisFailed { .. }) | Err(Error::Numerical(_)) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    check(successes > 0, "no synthesis succeeded")?;

    let impossible = System::new(
        mat(&[&[1.0]]),
        vec![mat(&[&[1.0]]), mat(&[&[0.0]])],
        DiffusionSpec::constant(mat(&[&[1.0]])).unwrap(),
    )
    .unwrap();
    match synthesize_gains(&impossible, &SynthesisOptions::default()) {
        Err(Error::SynthesisFailed { .. }) => {}
        other => return Err(format!("impossible instance returned {other:?}")),
    }
    Ok(format!("{successes}/{tried} successes all verified; B2 = 0 instance fails with SynthesisFailed"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("reliability oracle equivalence", Duration::from_secs(30), c1_reliability_oracle),
        ("Lyapunov residual", Duration::from_secs(10), c2_lyapunov_residual),
        ("OU stationarity triple agreement", Duration::from_secs(120), c3_ou_triple),
        ("FP residual convergence", Duration::from_secs(10), c4_fp_residual_rate),
        ("information-measure consistency", Duration::from_secs(30), c5_information_measures),
        ("end-to-end S1", Duration::from_secs(60), c6_end_to_end_s1),
        ("constant-sigma eps-scaling law", Duration::from_secs(30), c7_eps_scaling_law),
        ("Liouville trajectory", Duration::from_secs(60), c8_liouville_trajectory),
        ("determinism", Duration::from_secs(60), c9_determinism),
        ("synthesis soundness", Duration::from_secs(30), c10_synthesis_soundness),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed <= *budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; over the {}s budget", budget.as_secs()))
            }
        });
        let (tag, msg) = match result {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!("criterion {:>2} {tag} {name}: {msg} [{:.1}s]", i + 1, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
