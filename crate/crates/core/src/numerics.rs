//! Small dense linear algebra and seeded random streams.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated by the symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;
const POWER_MAX_ITERS: usize = 20_000;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut out = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            out[(i, i)] = v;
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Entrywise `self - rhs`.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs)?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// `self + scale * rhs`, entrywise.
    pub fn add_scaled(&self, scale: f64, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs)?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + scale * b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * scale).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`; `None` for non-square input.
    pub fn max_asymmetry(&self) -> Option<f64> {
        if !self.is_square() {
            return None;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, rhs: &Self) -> Result<()> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Dimension(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Neumaier's compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().total()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_symmetric(a: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    let asym = a.max_asymmetry().unwrap_or(0.0);
    if asym > SYMMETRY_TOL * a.frobenius_norm() {
        return Err(Error::Shape(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DenseMatrix,
}

/// Cyclic Jacobi eigen-solver for symmetric matrices.
pub fn eigh_symmetric(a: &DenseMatrix) -> Result<SymmetricEigen> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut w = a.clone();
    // Work on the exactly symmetric part.
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = avg;
            w[(j, i)] = avg;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let scale = w.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += w[(i, j)] * w[(i, j)];
            }
        }
        if libm::sqrt(off) <= f64::EPSILON * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = c * wkp - s * wkq;
                    w[(k, q)] = s * wkp + c * wkq;
                }
                for k in 0..n {
                    let wpk = w[(p, k)];
                    let wqk = w[(q, k)];
                    w[(p, k)] = c * wpk - s * wqk;
                    w[(q, k)] = s * wpk + c * wqk;
                }
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky
/// factorization with one step of iterative refinement.
pub fn solve_spd(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    let n = a.rows();
    if b.len() != n {
        return Err(Error::Dimension(format!("right-hand side has length {}, expected {n}", b.len())));
    }
    let l = cholesky(a)?;
    let mut x = cholesky_solve(&l, b);
    let ax = a.matvec(&x)?;
    let residual: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let correction = cholesky_solve(&l, &residual);
    for (xi, ci) in x.iter_mut().zip(correction) {
        *xi += ci;
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor.
fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: diag });
        }
        let ljj = libm::sqrt(diag);
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Largest singular value by power iteration on `AᵀA`.
///
/// The start vector is fixed (entries `1 + frac(0.618 j)`) so repeated calls
/// agree bit for bit.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Dimension("spectral norm of an empty matrix".into()));
    }
    let at = a.transpose();
    let cols = a.cols();
    let mut v: Vec<f64> = (0..cols).map(|j| 1.0 + (j as f64 * 0.618_033_988_749_894_9) % 1.0).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let av = a.matvec(&v)?;
        let sigma = norm2(&av);
        if sigma == 0.0 {
            // v sits in the null space; fall back to the widest column.
            return Ok((0..cols).map(|j| norm2(&a.column(j))).fold(0.0, f64::max));
        }
        let mut next = at.matvec(&av)?;
        let nn = norm2(&next);
        next.iter_mut().for_each(|x| *x /= nn);
        let converged = (sigma - estimate).abs() <= 1e-15 * sigma;
        estimate = sigma;
        v = next;
        if converged {
            break;
        }
    }
    Ok(estimate)
}

/// Logical consumer of randomness, one stream per purpose.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PARTITION: u64 = 3;
}

/// A `(seed, stream_id)` pair naming an independent ChaCha8 keystream.
///
/// Every call to [`RngStream::generator`] restarts the stream, so a consumer
/// that owns a stream sees the same draws regardless of what else ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn gaussian_from<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sigma: f64) -> Result<DenseMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("standard deviation must be finite and non-negative, got {sigma}")));
    }
    let data = (0..rows * cols).map(|_| sigma * standard_normal(rng)).collect();
    DenseMatrix::new(rows, cols, data)
}

/// Matrix of i.i.d. `N(0, sigma²)` entries drawn in row-major order from the
/// start of `stream`.
pub fn gaussian_matrix(stream: &RngStream, rows: usize, cols: usize, sigma: f64) -> Result<DenseMatrix> {
    gaussian_from(&mut stream.generator(), rows, cols, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn eigh_identity_and_diagonal() {
        let e = eigh_symmetric(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        let e = eigh_symmetric(&DenseMatrix::diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 3.0]);
    }

    #[test]
    fn eigh_two_by_two_matches_characteristic_roots() {
        // det([[2-x,1],[1,2-x]]) = x^2 - 4x + 3, roots from the quadratic formula.
        let (p, q) = (-4.0_f64, 3.0_f64);
        let disc = libm::sqrt(p * p / 4.0 - q);
        let roots = [-p / 2.0 - disc, -p / 2.0 + disc];
        let a = DenseMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let e = eigh_symmetric(&a).unwrap();
        assert_close(e.values[0], roots[0], 1e-14);
        assert_close(e.values[1], roots[1], 1e-14);
        let av = a.matmul(&e.vectors).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                assert_close(av[(i, j)], e.values[j] * e.vectors[(i, j)], 1e-12);
            }
        }
    }

    #[test]
    fn eigh_rejects_bad_input() {
        let rect = DenseMatrix::zeros(2, 3);
        assert!(matches!(eigh_symmetric(&rect), Err(Error::Dimension(_))));
        let asym = DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(eigh_symmetric(&asym), Err(Error::Shape(_))));
    }

    #[test]
    fn solve_spd_examples() {
        let x = solve_spd(&DenseMatrix::identity(2), &[5.0, 7.0]).unwrap();
        assert_eq!(x, vec![5.0, 7.0]);
        let x = solve_spd(&DenseMatrix::diagonal(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert_eq!(x, vec![1.0, 1.0]);

        // Closed-form 2x2 inverse: [[3,-1],[-1,4]] / 11.
        let a = DenseMatrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]).unwrap();
        let x = solve_spd(&a, &[1.0, 2.0]).unwrap();
        let expected = [(3.0 * 1.0 - 1.0 * 2.0) / 11.0, (-1.0 + 4.0 * 2.0) / 11.0];
        assert_close(x[0], expected[0], 1e-15);
        assert_close(x[1], expected[1], 1e-15);
    }

    #[test]
    fn solve_spd_reports_failing_pivot() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        match solve_spd(&a, &[1.0, 1.0]) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spectral_norm_examples() {
        assert_close(spectral_norm(&DenseMatrix::identity(3)).unwrap(), 1.0, 1e-12);
        assert_close(spectral_norm(&DenseMatrix::diagonal(&[2.0, -5.0])).unwrap(), 5.0, 1e-9);
        // [[0,1],[0,0]]: AᵀA = diag(0,1), singular values {1, 0}.
        let a = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert_close(spectral_norm(&a).unwrap(), 1.0, 1e-12);
        assert!(matches!(spectral_norm(&DenseMatrix::zeros(0, 0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn gaussian_matrix_contracts() {
        let s = RngStream::new(7, streams::INIT);
        assert_eq!(gaussian_matrix(&s, 3, 4, 0.0).unwrap(), DenseMatrix::zeros(3, 4));
        assert_eq!(gaussian_matrix(&s, 3, 4, 1.0).unwrap(), gaussian_matrix(&s, 3, 4, 1.0).unwrap());
        assert_ne!(
            gaussian_matrix(&s, 3, 4, 1.0).unwrap(),
            gaussian_matrix(&RngStream::new(7, streams::DATA), 3, 4, 1.0).unwrap()
        );
        assert!(matches!(gaussian_matrix(&s, 1, 1, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn gaussian_moments_at_one_million_draws() {
        // Standard error of the mean is 1e-3 and of the variance ~1.4e-3, so the
        // 0.01 / 0.02 windows sit at 7 and 14 standard errors.
        let g = gaussian_matrix(&RngStream::new(11, 99), 1000, 1000, 1.0).unwrap();
        let n = g.as_slice().len() as f64;
        let mean = compensated_sum(g.as_slice().iter().copied()) / n;
        let var = compensated_sum(g.as_slice().iter().map(|x| (x - mean) * (x - mean))) / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1.0e16];
        values.extend(core::iter::repeat_n(1.0, 1000));
        values.push(-1.0e16);
        assert_eq!(compensated_sum(values), 1000.0);
    }

    #[test]
    fn new_rejects_bad_entries() {
        assert!(matches!(DenseMatrix::new(2, 2, vec![0.0; 3]), Err(Error::Dimension(_))));
        assert!(matches!(DenseMatrix::new(1, 2, vec![0.0, f64::NAN]), Err(Error::Validation(_))));
    }
}
