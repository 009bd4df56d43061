//! Matrix exponential by scaling and squaring with a [13/13] Padé approximant.

use super::{Lu, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the degree-13 approximant is accurate to unit
// roundoff in double precision.
const THETA13: f64 = 5.371920351148152;

/// `exp(M)` for a square matrix.
pub fn expm<T: Real>(m: &Matrix<T>) -> Result<Matrix<T>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("expm of a non-finite matrix".into()));
    }
    let n = m.nrows();
    let norm = m.norm1();
    let theta = T::lit(THETA13);
    let s = if norm > theta {
        (norm / theta).log2().ceil().to_i32().unwrap_or(i32::MAX).max(0)
    } else {
        0
    };
    if s > 1000 {
        return Err(Error::Numerical(format!("expm: norm {} overflows", norm)));
    }
    let a = m.scale(T::lit(2.0).powi(-s));
    let b: Vec<T> = PADE13.iter().map(|&c| T::lit(c)).collect();
    let ident = Matrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let lin = |c6: T, c4: T, c2: T, c0: T| -> Matrix<T> {
        let mut out = a6.scale(c6);
        out = &out + &a4.scale(c4);
        out = &out + &a2.scale(c2);
        &out + &ident.scale(c0)
    };
    let u_inner = &(&a6 * &lin(b[13], b[11], b[9], T::zero())) + &lin(b[7], b[5], b[3], b[1]);
    let u = &a * &u_inner;
    let v = &(&a6 * &lin(b[12], b[10], b[8], T::zero())) + &lin(b[6], b[4], b[2], b[0]);

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = Lu::factor(&denom)?.solve_matrix(&numer);
    for _ in 0..s {
        r = &r * &r;
        if !r.is_finite() {
            return Err(Error::Numerical("expm overflowed while squaring".into()));
        }
    }
    if !r.is_finite() {
        return Err(Error::Numerical("expm produced non-finite entries".into()));
    }
    Ok(r)
}
