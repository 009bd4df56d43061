//! Banded LU with partial pivoting, used by the grid Fokker–Planck solver.
//!
//! Row `i` stores columns `i-kl ..= i+kl+ku`; the extra `kl` upper diagonals
//! hold fill-in from row interchanges. Multipliers are kept apart from `U` and
//! replayed with the pivot sequence at solve time.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct BandedLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
    mult: Vec<T>,
    piv: Vec<usize>,
    pivots: Vec<T>,
    reference: Vec<T>,
    floored: usize,
}

impl<T: Real> BandedLu<T> {
    /// Empty `n×n` operator with `kl` sub- and `ku` super-diagonals.
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
            mult: vec![T::zero(); n * kl.max(1)],
            piv: Vec::new(),
            pivots: Vec::new(),
            reference: Vec::new(),
            floored: 0,
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    /// Accumulates `v` into entry `(i, j)`; must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band"
        );
        let s = self.slot(i, j);
        self.data[s] = self.data[s] + v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.kl < i || j > i + self.kl + self.ku {
            T::zero()
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `y = A x` for the unfactored operator.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        assert!(self.piv.is_empty(), "apply after factorization");
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Factors in place with partial pivoting. Pivots smaller than
    /// `eps·max|a|` are replaced by that floor and counted (see
    /// [`BandedLu::floored_pivots`]).
    pub fn factor(mut self) -> Self {
        let n = self.n;
        let scale = self
            .data
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
            .max(T::min_positive_value());
        let floor = scale * T::epsilon();
        let mut piv = Vec::with_capacity(n);
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            let right = (k + self.kl + self.ku).min(n - 1);
            if p != k {
                for j in k..=right {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            piv.push(p);
            let kk = self.slot(k, k);
            if self.data[kk].abs() < floor {
                self.data[kk] = if self.data[kk] < T::zero() { -floor } else { floor };
                self.floored += 1;
            }
            let pivot = self.data[kk];
            pivots.push(pivot);
            for i in k + 1..=last {
                let ik = self.slot(i, k);
                let f = self.data[ik] / pivot;
                self.data[ik] = T::zero();
                self.mult[k * self.kl.max(1) + (i - k - 1)] = f;
                if f != T::zero() {
                    for j in k + 1..=right {
                        let u = self.data[self.slot(k, j)];
                        let s = self.slot(i, j);
                        self.data[s] = self.data[s] - f * u;
                    }
                }
            }
        }
        self.piv = piv;
        self.pivots = pivots;
        self.reference = vec![scale; n];
        self
    }

    /// Factors a generator matrix (zero column sums) without pivoting, taking
    /// each pivot as minus the sum of the off-diagonal entries left in its
    /// column (Grassmann–Taksar–Heyman). For nonnegative off-diagonals this
    /// involves no cancellation, so the singular pivot comes out as an exact
    /// zero however graded the null vector is. Zero pivots are floored as in
    /// [`BandedLu::factor`]; near-zero tests compare each pivot with the
    /// original diagonal entry of its column.
    pub fn factor_generator(mut self) -> Self {
        let n = self.n;
        let scale = self
            .data
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
            .max(T::min_positive_value());
        let floor = scale * T::epsilon();
        let reference: Vec<T> = (0..n).map(|k| self.get(k, k).abs()).collect();
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let right = (k + self.ku).min(n - 1);
            let off: T = (k + 1..=last).map(|i| self.get(i, k)).sum();
            let kk = self.slot(k, k);
            self.data[kk] = -off;
            if self.data[kk].abs() < floor {
                self.data[kk] = if self.data[kk] > T::zero() { floor } else { -floor };
                self.floored += 1;
            }
            let pivot = self.data[kk];
            pivots.push(pivot);
            for i in k + 1..=last {
                let ik = self.slot(i, k);
                let f = self.data[ik] / pivot;
                self.data[ik] = T::zero();
                self.mult[k * self.kl.max(1) + (i - k - 1)] = f;
                if f != T::zero() {
                    for j in k + 1..=right {
                        let u = self.data[self.slot(k, j)];
                        let s = self.slot(i, j);
                        self.data[s] = self.data[s] - f * u;
                    }
                }
            }
        }
        self.piv = (0..n).collect();
        self.pivots = pivots;
        self.reference = reference;
        self
    }

    /// Number of pivots with `|u_kk| <= rel_tol · reference_k`, where the
    /// reference is the largest input entry for [`BandedLu::factor`] and the
    /// column's own diagonal for [`BandedLu::factor_generator`].
    pub fn near_zero_pivots(&self, rel_tol: T) -> usize {
        self.pivots
            .iter()
            .zip(&self.reference)
            .filter(|(p, r)| p.abs() <= rel_tol * **r)
            .count()
    }

    pub fn floored_pivots(&self) -> usize {
        self.floored
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(self.piv.len(), self.n, "solve before factor");
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + self.kl).min(n - 1);
            for i in k + 1..=last {
                let f = self.mult[k * self.kl.max(1) + (i - k - 1)];
                x[i] = x[i] - f * x[k];
            }
        }
        for i in (0..n).rev() {
            let right = (i + self.kl + self.ku).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=right {
                s = s - self.data[self.slot(i, j)] * x[j];
            }
            x[i] = s / self.data[self.slot(i, i)];
        }
        x
    }
}
