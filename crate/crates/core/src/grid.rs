//! Boxed uniform grids and densities sampled on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cell-centred uniform grid on the box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    pub n_cells: Vec<usize>,
}

impl<T: Real> GridSpec<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>, n_cells: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n_cells.len() || lo.is_empty() {
            return Err(Error::Dimension(format!(
                "grid bounds/cells disagree: {} / {} / {}",
                lo.len(),
                hi.len(),
                n_cells.len()
            )));
        }
        for k in 0..lo.len() {
            if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
                return Err(Error::InvalidInput(format!("grid axis {k} has an empty or non-finite range")));
            }
            if n_cells[k] == 0 {
                return Err(Error::InvalidInput(format!("grid axis {k} has no cells")));
            }
        }
        Ok(Self { lo, hi, n_cells })
    }

    /// Same number of cells on every axis.
    pub fn uniform(lo: Vec<T>, hi: Vec<T>, cells: usize) -> Result<Self> {
        let n = vec![cells; lo.len()];
        Self::new(lo, hi, n)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.n_cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> T {
        (self.hi[axis] - self.lo[axis]) / T::from_usize_lossy(self.n_cells[axis])
    }

    pub fn cell_volume(&self) -> T {
        (0..self.dim()).map(|k| self.spacing(k)).fold(T::one(), |a, b| a * b)
    }

    /// Coordinate of the centre of cell `i` along `axis`.
    pub fn center(&self, axis: usize, i: usize) -> T {
        self.lo[axis] + (T::from_usize_lossy(i) + T::lit(0.5)) * self.spacing(axis)
    }

    /// Row-major flat index; the last axis varies fastest.
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.n_cells)
            .fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.n_cells[k];
            flat /= self.n_cells[k];
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<T> {
        self.unflat(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.center(k, i))
            .collect()
    }

    /// Cell containing `x`, or `None` outside the box (upper faces included).
    pub fn locate(&self, x: &[T]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let v = x[k];
            if !(v >= self.lo[k] && v <= self.hi[k]) {
                return None;
            }
            let i = ((v - self.lo[k]) / self.spacing(k)).floor().to_usize().unwrap_or(0);
            idx.push(i.min(self.n_cells[k] - 1));
        }
        Some(self.flat(&idx))
    }

    /// Smallest box containing both.
    pub fn union_box(&self, other: &Self) -> Result<(Vec<T>, Vec<T>)> {
        if self.dim() != other.dim() {
            return Err(Error::GridMismatch);
        }
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect();
        Ok((lo, hi))
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.n_cells == other.n_cells
            && self.lo.iter().zip(&other.lo).all(|(a, b)| a == b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| a == b)
    }
}

/// Nonnegative density values at cell centres, normalized so that
/// `Σ values · cell_volume = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity<T> {
    pub grid: GridSpec<T>,
    pub values: Vec<T>,
}

impl<T: Real> GridDensity<T> {
    /// Normalizes `values` to unit mass; rejects negative or all-zero input.
    pub fn from_unnormalized(grid: GridSpec<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Domain("grid density values must be finite and nonnegative".into()));
        }
        let mass: T = values.iter().copied().sum::<T>() * grid.cell_volume();
        if !(mass > T::zero()) {
            return Err(Error::Domain("grid density has zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Self { grid, values })
    }

    /// Samples `f` at cell centres and normalizes.
    pub fn from_fn(grid: GridSpec<T>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        let values = (0..grid.len()).map(|c| f(&grid.point(c))).collect();
        Self::from_unnormalized(grid, values)
    }

    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.cell_volume()
    }

    /// Piecewise-constant evaluation; zero outside the box.
    pub fn value_at(&self, x: &[T]) -> T {
        self.grid
            .locate(x)
            .map_or(T::zero(), |c| self.values[c])
    }

    /// `Σ |p − q| · cell_volume` on a shared grid.
    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).abs())
            .sum::<T>()
            * self.grid.cell_volume())
    }

    pub fn mean(&self) -> Vec<T> {
        let vol = self.grid.cell_volume();
        let mut m = vec![T::zero(); self.grid.dim()];
        for (c, v) in self.values.iter().enumerate() {
            for (k, x) in self.grid.point(c).into_iter().enumerate() {
                m[k] = m[k] + *v * vol * x;
            }
        }
        m
    }

    /// Second central moments (row-major `d×d`).
    pub fn covariance(&self) -> Vec<T> {
        let d = self.grid.dim();
        let mean = self.mean();
        let vol = self.grid.cell_volume();
        let mut cov = vec![T::zero(); d * d];
        for (c, v) in self.values.iter().enumerate() {
            let x = self.grid.point(c);
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] = cov[i * d + j] + *v * vol * (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        cov
    }

    /// Replaces every empty cell by the mean value over the smallest centred
    /// window (clipped to the box) that contains a nonzero cell, then
    /// renormalizes. Occupied cells are left untouched.
    pub fn fill_empty_cells(&self) -> Result<Self> {
        let d = self.grid.dim();
        let n = &self.grid.n_cells;
        let max_radius = n.iter().copied().max().unwrap_or(1);
        let mut out = self.values.clone();
        for c in 0..self.values.len() {
            if self.values[c] > T::zero() {
                continue;
            }
            let center = self.grid.unflat(c);
            for radius in 1..=max_radius {
                let lo: Vec<usize> = center.iter().map(|&i| i.saturating_sub(radius)).collect();
                let hi: Vec<usize> = center
                    .iter()
                    .zip(n)
                    .map(|(&i, &nk)| (i + radius).min(nk - 1))
                    .collect();
                let (sum, count) = window_sum(&self.values, &self.grid, &lo, &hi, d);
                if sum > T::zero() {
                    out[c] = sum / T::from_usize_lossy(count);
                    break;
                }
            }
        }
        Self::from_unnormalized(self.grid.clone(), out)
    }
}

fn window_sum<T: Real>(
    values: &[T],
    grid: &GridSpec<T>,
    lo: &[usize],
    hi: &[usize],
    d: usize,
) -> (T, usize) {
    let mut idx = lo.to_vec();
    let mut sum = T::zero();
    let mut count = 0;
    loop {
        sum = sum + values[grid.flat(&idx)];
        count += 1;
        let mut k = d;
        loop {
            if k == 0 {
                return (sum, count);
            }
            k -= 1;
            if idx[k] < hi[k] {
                idx[k] += 1;
                break;
            }
            idx[k] = lo[k];
        }
    }
}

/// Node-based tensor grid for trapezoidal quadrature: `points[k]` nodes from
/// `lo[k]` to `hi[k]` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidGrid<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    pub points: Vec<usize>,
}

/// Quadrature value with an a-posteriori error estimate (difference to the
/// half-resolution rule, Richardson-scaled).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature<T> {
    pub value: T,
    pub tol: T,
}

impl<T: Real> TrapezoidGrid<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>, points: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != points.len() || lo.is_empty() {
            return Err(Error::Dimension("trapezoid grid bounds/points disagree".into()));
        }
        for k in 0..lo.len() {
            if !(hi[k] > lo[k]) {
                return Err(Error::InvalidInput(format!("trapezoid axis {k} is empty")));
            }
            if points[k] < 3 || points[k].is_multiple_of(2) {
                return Err(Error::InvalidInput(format!(
                    "trapezoid axis {k} needs an odd number (>= 3) of points"
                )));
            }
        }
        Ok(Self { lo, hi, points })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Integrates `f` with the tensor trapezoid rule.
    pub fn integrate(&self, f: impl Fn(&[T]) -> T) -> Quadrature<T> {
        let d = self.dim();
        let h: Vec<T> = (0..d)
            .map(|k| (self.hi[k] - self.lo[k]) / T::from_usize_lossy(self.points[k] - 1))
            .collect();
        let mut idx = vec![0usize; d];
        let mut fine = T::zero();
        let mut coarse = T::zero();
        let mut x = vec![T::zero(); d];
        loop {
            let mut w_fine = T::one();
            let mut w_coarse = T::one();
            let mut on_coarse = true;
            for k in 0..d {
                x[k] = self.lo[k] + T::from_usize_lossy(idx[k]) * h[k];
                let end = idx[k] == 0 || idx[k] == self.points[k] - 1;
                w_fine = w_fine * if end { T::lit(0.5) } else { T::one() } * h[k];
                if idx[k] % 2 == 1 {
                    on_coarse = false;
                } else {
                    w_coarse = w_coarse * if end { T::one() } else { T::lit(2.0) } * h[k];
                }
            }
            let v = f(&x);
            fine = fine + w_fine * v;
            if on_coarse {
                coarse = coarse + w_coarse * v;
            }
            let mut k = d;
            loop {
                if k == 0 {
                    let tol = (fine - coarse).abs() / T::lit(3.0) + T::epsilon() * fine.abs();
                    return Quadrature { value: fine, tol };
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.points[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_round_trip() {
        let g = GridSpec::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 4]).unwrap();
        for c in 0..g.len() {
            assert_eq!(g.flat(&g.unflat(c)), c);
        }
        assert_eq!(g.locate(&[0.99, 0.99]), Some(g.flat(&[2, 3])));
        assert_eq!(g.locate(&[1.0, 1.0]), Some(g.flat(&[2, 3])));
        assert_eq!(g.locate(&[1.01, 0.0]), None);
    }

    #[test]
    fn normalization_and_moments() {
        let g = GridSpec::<f64>::uniform(vec![0.0], vec![2.0], 4).unwrap();
        let d = GridDensity::from_unnormalized(g, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-15);
        assert!((d.values[0] - 0.5).abs() < 1e-15);
        assert!((d.mean()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        let g = GridSpec::uniform(vec![0.0], vec![1.0], 2).unwrap();
        assert!(GridDensity::from_unnormalized(g.clone(), vec![0.0, 0.0]).is_err());
        assert!(GridDensity::from_unnormalized(g.clone(), vec![-1.0, 2.0]).is_err());
        assert!(GridDensity::from_unnormalized(g, vec![1.0]).is_err());
    }

    #[test]
    fn fill_empty_uses_nearest_window() {
        let g = GridSpec::uniform(vec![0.0], vec![5.0], 5).unwrap();
        let d = GridDensity::from_unnormalized(g, vec![0.0, 0.0, 4.0, 0.0, 0.0]).unwrap();
        let f = d.fill_empty_cells().unwrap();
        // cell 1 and 3 see window of 3 with one occupied -> 4/3; cells 0 and 4 see
        // clipped window of 3 (radius 2) -> 4/3.
        let raw: Vec<f64> = f.values.iter().map(|v| v / f.values[2] * 4.0).collect();
        for (i, want) in [4.0 / 3.0, 4.0 / 3.0, 4.0, 4.0 / 3.0, 4.0 / 3.0].iter().enumerate() {
            assert!((raw[i] - want).abs() < 1e-12, "{raw:?}");
        }
        assert!((f.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_polynomial() {
        let t = TrapezoidGrid::<f64>::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![5, 9]).unwrap();
        let q = t.integrate(|x| x[0] + x[1]);
        assert!((q.value - 3.0).abs() < 1e-14);
        assert!(TrapezoidGrid::new(vec![0.0], vec![1.0], vec![4]).is_err());
    }
}
