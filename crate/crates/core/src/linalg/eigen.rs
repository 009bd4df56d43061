//! Eigenvalues of dense real matrices.
//!
//! Nonsymmetric path: balancing, Householder reduction to upper Hessenberg
//! form and the Francis double-shift QR iteration. Each eigenvalue is then
//! certified by a short complex inverse iteration on the original matrix
//! (normalized residual `‖Mv − λv‖` within `1e-10·max(1, ‖M‖_F)`).

use num_complex::Complex;

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue<T> {
    pub re: T,
    pub im: T,
}

const MAX_QR_SWEEPS: usize = 60;

/// All eigenvalues of a square real matrix, in no particular order.
pub fn eigenvalues<T: Real>(m: &Matrix<T>) -> Result<Vec<Eigenvalue<T>>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based working copy, mirrors the classic EISPACK layout.
    let mut a = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    balance(&mut a, n);
    hessenberg(&mut a, n);
    let vals = hqr(&mut a, n)?;

    let scale = T::one().max(m.frobenius_norm());
    let tol = T::tol(1e-10) * scale;
    for ev in &vals {
        let res = inverse_iteration_residual(m, *ev);
        if !(res <= tol) {
            return Err(Error::Numerical(format!(
                "eigenvalue {}{:+}i failed residual check ({:e})",
                ev.re, ev.im, res.to_f64_lossy()
            )));
        }
    }
    Ok(vals)
}

fn balance<T: Real>(a: &mut [Vec<T>], n: usize) {
    let radix = T::lit(2.0);
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut r = T::zero();
            let mut c = T::zero();
            for j in 1..=n {
                if j != i {
                    c = c + a[j][i].abs();
                    r = r + a[i][j].abs();
                }
            }
            if c != T::zero() && r != T::zero() {
                let mut g = r / radix;
                let mut f = T::one();
                let s = c + r;
                while c < g {
                    f = f * radix;
                    c = c * sqrdx;
                }
                g = r * radix;
                while c > g {
                    f = f / radix;
                    c = c / sqrdx;
                }
                if (c + r) / f < T::lit(0.95) * s {
                    done = false;
                    let g = T::one() / f;
                    for j in 1..=n {
                        a[i][j] = a[i][j] * g;
                    }
                    for j in 1..=n {
                        a[j][i] = a[j][i] * f;
                    }
                }
            }
        }
    }
}

/// Householder similarity reduction to upper Hessenberg form (1-based).
fn hessenberg<T: Real>(a: &mut [Vec<T>], n: usize) {
    if n < 3 {
        return;
    }
    for k in 1..=n - 2 {
        let len = n - k;
        let mut v: Vec<T> = (0..len).map(|i| a[k + 1 + i][k]).collect();
        let xnorm = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if xnorm == T::zero() {
            continue;
        }
        let alpha = if v[0] >= T::zero() { -xnorm } else { xnorm };
        v[0] = v[0] - alpha;
        let vnorm = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for x in v.iter_mut() {
            *x = *x / vnorm;
        }
        let two = T::lit(2.0);
        // rows k+1..n from the left
        for j in 1..=n {
            let s: T = (0..len).map(|i| v[i] * a[k + 1 + i][j]).sum();
            for i in 0..len {
                a[k + 1 + i][j] = a[k + 1 + i][j] - two * v[i] * s;
            }
        }
        // columns k+1..n from the right
        for i in 1..=n {
            let s: T = (0..len).map(|jj| a[i][k + 1 + jj] * v[jj]).sum();
            for jj in 0..len {
                a[i][k + 1 + jj] = a[i][k + 1 + jj] - two * s * v[jj];
            }
        }
        a[k + 1][k] = alpha;
        for i in k + 2..=n {
            a[i][k] = T::zero();
        }
    }
}

fn sign<T: Real>(a: T, b: T) -> T {
    if b >= T::zero() {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (1-based indices).
fn hqr<T: Real>(a: &mut [Vec<T>], n: usize) -> Result<Vec<Eigenvalue<T>>> {
    let mut wr = vec![T::zero(); n + 1];
    let mut wi = vec![T::zero(); n + 1];
    let mut anorm = T::zero();
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm = anorm + a[i][j].abs();
        }
    }
    let at = |a: &[Vec<T>], i: isize, j: isize| a[i as usize][j as usize];

    let mut nn = n as isize;
    let mut t = T::zero();
    let (mut p, mut q, mut r) = (T::zero(), T::zero(), T::zero());
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = at(a, l - 1, l - 1).abs() + at(a, l, l).abs();
                if s == T::zero() {
                    s = anorm;
                }
                if at(a, l, l - 1).abs() + s == s {
                    a[l as usize][(l - 1) as usize] = T::zero();
                    break;
                }
                l -= 1;
            }
            x = at(a, nn, nn);
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = T::zero();
                nn -= 1;
            } else {
                y = at(a, nn - 1, nn - 1);
                w = at(a, nn, nn - 1) * at(a, nn - 1, nn);
                if l == nn - 1 {
                    p = T::lit(0.5) * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x = x + t;
                    let (i1, i2) = ((nn - 1) as usize, nn as usize);
                    if q >= T::zero() {
                        z = p + sign(z, p);
                        wr[i1] = x + z;
                        wr[i2] = x + z;
                        if z != T::zero() {
                            wr[i2] = x - w / z;
                        }
                        wi[i1] = T::zero();
                        wi[i2] = T::zero();
                    } else {
                        wr[i1] = x + p;
                        wr[i2] = x + p;
                        wi[i1] = -z;
                        wi[i2] = z;
                    }
                    nn -= 2;
                } else {
                    if its == MAX_QR_SWEEPS {
                        return Err(Error::Numerical(
                            "QR iteration did not converge".into(),
                        ));
                    }
                    if its.is_multiple_of(10) && its > 0 {
                        // exceptional shift
                        t = t + x;
                        for i in 1..=nn {
                            a[i as usize][i as usize] = a[i as usize][i as usize] - x;
                        }
                        let s = at(a, nn, nn - 1).abs() + at(a, nn - 1, nn - 2).abs();
                        x = T::lit(0.75) * s;
                        y = x;
                        w = T::lit(-0.4375) * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    while m >= l {
                        z = at(a, m, m);
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / at(a, m + 1, m) + at(a, m, m + 1);
                        q = at(a, m + 1, m + 1) - z - r - s;
                        r = at(a, m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p = p / s;
                        q = q / s;
                        r = r / s;
                        if m == l {
                            break;
                        }
                        let u = at(a, m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (at(a, m - 1, m - 1).abs() + z.abs() + at(a, m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a[i as usize][(i - 2) as usize] = T::zero();
                        if i != m + 2 {
                            a[i as usize][(i - 3) as usize] = T::zero();
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = at(a, k, k - 1);
                            q = at(a, k + 1, k - 1);
                            r = T::zero();
                            if k != nn - 1 {
                                r = at(a, k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != T::zero() {
                                p = p / x;
                                q = q / x;
                                r = r / x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != T::zero() {
                            let (ku, km1) = (k as usize, (k - 1).max(0) as usize);
                            if k == m {
                                if l != m {
                                    a[ku][km1] = -a[ku][km1];
                                }
                            } else {
                                a[ku][km1] = -s * x;
                            }
                            p = p + s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q = q / p;
                            r = r / p;
                            for j in k..=nn {
                                let j = j as usize;
                                p = a[ku][j] + q * a[ku + 1][j];
                                if k != nn - 1 {
                                    p = p + r * a[ku + 2][j];
                                    a[ku + 2][j] = a[ku + 2][j] - p * z;
                                }
                                a[ku + 1][j] = a[ku + 1][j] - p * y;
                                a[ku][j] = a[ku][j] - p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                let i = i as usize;
                                p = x * a[i][ku] + y * a[i][ku + 1];
                                if k != nn - 1 {
                                    p = p + z * a[i][ku + 2];
                                    a[i][ku + 2] = a[i][ku + 2] - p * r;
                                }
                                a[i][ku + 1] = a[i][ku + 1] - p * q;
                                a[i][ku] = a[i][ku] - p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n)
        .map(|i| Eigenvalue {
            re: wr[i],
            im: wi[i],
        })
        .collect())
}

/// Normalized residual `‖(M − λI)v‖` after two steps of inverse iteration.
fn inverse_iteration_residual<T: Real>(m: &Matrix<T>, ev: Eigenvalue<T>) -> T {
    let n = m.nrows();
    let lambda = Complex::new(ev.re, ev.im);
    // A tiny offset keeps `M − λI` invertible for exact (possibly defective)
    // eigenvalues; the residual itself is measured against the unshifted λ.
    let offset = T::lit(1e3) * T::epsilon() * T::one().max(m.frobenius_norm());
    let shifted = lambda + Complex::new(offset, T::zero());
    let mut a: Vec<Complex<T>> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut v = Complex::new(m[(i, j)], T::zero());
            if i == j {
                v = v - shifted;
            }
            a.push(v);
        }
    }
    let floor = T::epsilon() * T::one().max(m.frobenius_norm());
    // LU with partial pivoting; zero pivots nudged to `floor`.
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].norm() > a[p * n + k].norm() {
                p = i;
            }
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        if a[k * n + k].norm() < floor {
            a[k * n + k] = Complex::new(floor, T::zero());
        }
        let piv = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            a[i * n + k] = f;
            for j in k + 1..n {
                let u = a[k * n + j];
                a[i * n + j] = a[i * n + j] - f * u;
            }
        }
    }
    let solve = |b: &[Complex<T>]| -> Vec<Complex<T>> {
        let mut x: Vec<Complex<T>> = perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = a[i * n + j];
                x[i] = x[i] - l * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = a[i * n + j];
                x[i] = x[i] - u * x[j];
            }
            x[i] = x[i] / a[i * n + i];
        }
        x
    };
    let norm = |v: &[Complex<T>]| v.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();

    let start = T::one() / T::from_usize_lossy(n).sqrt();
    let mut v: Vec<Complex<T>> = (0..n)
        .map(|i| Complex::new(start, start * T::lit(0.1) * T::from_usize_lossy(i)))
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|c| *c = *c / nv);
    for _ in 0..3 {
        let x = solve(&v);
        let nx = norm(&x);
        if !(nx.is_finite()) || nx == T::zero() {
            break;
        }
        v = x.into_iter().map(|c| c / nx).collect();
    }
    // Explicit check on the final vector.
    let mut explicit = T::zero();
    for i in 0..n {
        let mut s = -lambda * v[i];
        for j in 0..n {
            s = s + v[j] * m[(i, j)];
        }
        explicit = explicit + s.norm_sqr();
    }
    explicit.sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Real>(m: &Matrix<T>) -> Result<Vec<T>> {
    if !m.is_square() {
        return Err(Error::Dimension("symmetric eigenvalues need a square matrix".into()));
    }
    let n = m.nrows();
    let mut a = m.symmetrize();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= T::epsilon() * T::epsilon() * a.frobenius_norm().powi(2) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = sign(T::one(), theta) / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d = a.diagonal();
    d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(d)
}
