//! Independent oracles: nalgebra spectra and solves, hand-derived closed
//! forms for the scalar two-channel example, and brute-force quadrature.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use redunquant::{Diffusion, Gains, Mat, System};

pub const LN2: f64 = std::f64::consts::LN_2;

pub fn mat(rows: &[&[f64]]) -> Mat {
    Mat::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

pub fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Mat {
    let rows = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect();
    Mat::from_rows(rows).unwrap()
}

/// `ẋ = x + u₁ + u₂`, `K₁ = K₂ = −2`, `σ = 1`.
pub fn s1() -> (System, Gains) {
    let one = mat(&[&[1.0]]);
    let sys = System::new(
        one.clone(),
        vec![one.clone(), one.clone()],
        Diffusion::constant(one).unwrap(),
    )
    .unwrap();
    (sys, Gains::new(vec![mat(&[&[-2.0]]), mat(&[&[-2.0]])]))
}

/// Hand-derived `r(ε)` for S1: nominal variance `ε²/6`, outage variance
/// `ε²/2`, so each relative entropy is `½(3 − 1 − ln 3)` nats.
pub fn s1_r(eps: f64) -> f64 {
    let kl = 0.5 * (2.0 - 3f64.ln()) / LN2;
    let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * eps * eps / 6.0).log2();
    (kl + kl) / 4.0 - h
}

/// Hand-derived `r_t` for S1 from `ρ₀ = N(0, 1)`: nominal variance `e^{−6t}`,
/// outage variance `e^{−2t}`.
pub fn s1_r_t(t: f64) -> f64 {
    let ratio = (4.0 * t).exp();
    let kl = 0.5 * (ratio - 1.0 - ratio.ln()) / LN2;
    let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * (-6.0 * t).exp()).log2();
    kl / 2.0 - h
}

/// Largest real part of the eigenvalues, via nalgebra's Schur form.
pub fn oracle_abscissa(m: &Mat) -> f64 {
    to_na(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Every closed loop formed from scratch: `A + Σ_{i ≠ j} B_i K_i`.
pub fn oracle_closed_loops(a: &Mat, b: &[Mat], k: &[Mat]) -> Vec<DMatrix<f64>> {
    let n = b.len();
    (0..=n)
        .map(|j| {
            let mut m = to_na(a);
            for i in 0..n {
                if i + 1 != j {
                    m += to_na(&b[i]) * to_na(&k[i]);
                }
            }
            m
        })
        .collect()
}

pub fn oracle_reliable(a: &Mat, b: &[Mat], k: &[Mat]) -> bool {
    oracle_closed_loops(a, b, k).iter().all(|m| {
        m.clone()
            .complex_eigenvalues()
            .iter()
            .all(|z| z.re < 0.0)
    })
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, half: f64) -> Mat {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-half..half)).collect();
    Mat::from_row_slice(rows, cols, &data).unwrap()
}

/// A random Hurwitz matrix with abscissa in `[−2, −0.1]`.
pub fn random_stable(rng: &mut impl Rng, d: usize) -> Mat {
    let m = uniform_matrix(rng, d, d, 2.0);
    let shift = oracle_abscissa(&m) + rng.random_range(0.1..2.0);
    let mut na = to_na(&m);
    for i in 0..d {
        na[(i, i)] -= shift;
    }
    from_na(&na)
}

/// Random system whose gains are reliable by construction: each channel
/// alone stabilizes `A` strongly because `B_i = I`, `K_i = −(‖A‖+1) I`.
pub fn random_reliable(rng: &mut impl Rng, d: usize, n: usize) -> (System, Gains) {
    let a = uniform_matrix(rng, d, d, 2.0);
    let big = to_na(&a).norm() + 1.0 + rng.random_range(0.0..1.0);
    let b: Vec<Mat> = (0..n).map(|_| Mat::identity(d)).collect();
    let k: Vec<Mat> = (0..n).map(|_| Mat::identity(d).scale(-big)).collect();
    let s = uniform_matrix(rng, d, d, 1.0);
    let s = from_na(&(to_na(&s) + DMatrix::identity(d, d) * 3.0));
    let sys = System::new(a, b, Diffusion::constant(s).unwrap()).unwrap();
    (sys, Gains::new(k))
}

/// `A P + P Aᵀ + Q = 0` through nalgebra's LU on the Kronecker system.
pub fn oracle_lyapunov(a: &Mat, q: &Mat) -> DMatrix<f64> {
    let d = a.nrows();
    let na = to_na(a);
    let eye = DMatrix::<f64>::identity(d, d);
    let big = eye.kronecker(&na) + na.kronecker(&eye);
    // Column-major vec(P).
    let rhs = -DMatrix::from_iterator(d * d, 1, to_na(q).iter().copied());
    let x = big.lu().solve(&rhs).expect("nonsingular Kronecker system");
    DMatrix::from_iterator(d, d, x.iter().copied())
}

fn gauss_pdf_1d(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Midpoint sums on `±8σ` with `n` cells.
pub fn quad_entropy_1d(var: f64, n: usize) -> f64 {
    let half = 8.0 * var.sqrt();
    let h = 2.0 * half / n as f64;
    (0..n)
        .map(|i| {
            let p = gauss_pdf_1d(-half + (i as f64 + 0.5) * h, 0.0, var);
            if p > 0.0 {
                -p * p.log2() * h
            } else {
                0.0
            }
        })
        .sum()
}

pub fn quad_kl_1d(mq: f64, vq: f64, mp: f64, vp: f64, n: usize) -> f64 {
    let half = 8.0 * vq.sqrt().max(vp.sqrt()) + mq.abs().max(mp.abs());
    let h = 2.0 * half / n as f64;
    (0..n)
        .map(|i| {
            let x = -half + (i as f64 + 0.5) * h;
            let q = gauss_pdf_1d(x, mq, vq);
            let p = gauss_pdf_1d(x, mp, vp);
            if q > 0.0 {
                q * (q / p).log2() * h
            } else {
                0.0
            }
        })
        .sum()
}

/// Zero-mean 2D Gaussian entropy by midpoint sums.
pub fn quad_entropy_2d(cov: [[f64; 2]; 2], n: usize) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[1][0] / det, cov[0][0] / det],
    ];
    let hx = 8.0 * cov[0][0].sqrt();
    let hy = 8.0 * cov[1][1].sqrt();
    let (dx, dy) = (2.0 * hx / n as f64, 2.0 * hy / n as f64);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let mut total = 0.0;
    for i in 0..n {
        let x = -hx + (i as f64 + 0.5) * dx;
        for j in 0..n {
            let y = -hy + (j as f64 + 0.5) * dy;
            let e = inv[0][0] * x * x + 2.0 * inv[0][1] * x * y + inv[1][1] * y * y;
            let p = norm * (-0.5 * e).exp();
            if p > 0.0 {
                total -= p * p.log2() * dx * dy;
            }
        }
    }
    total
}
