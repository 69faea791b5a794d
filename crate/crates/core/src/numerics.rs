//! Dense linear algebra used by the estimators and the performance model.
//!
//! Everything is `f64` and row-major. Vectors are plain slices; matrices are
//! [`Mat`]. The problem sizes are small (L ≤ 64) so all routines are the
//! textbook O(n³) dense variants.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when deciding whether a matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Iteration cap for the power method.
pub const POWER_ITER_CAP: usize = 100_000;

const JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry in matrix or vector")]
    NonFinite,
    #[error("iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
#[derive(Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Mat::from_rows(&rows).map_err(|e| e.to_string())
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        let m = Self { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if nrows == 0 || ncols == 0 {
            return Err(LinalgError::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(LinalgError::DimensionMismatch { expected: ncols, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(nrows, ncols, data)
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        out
    }

    #[inline]
    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(i), v);
        }
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_matvec_into(v, &mut out);
        out
    }

    #[inline]
    pub fn tr_matvec_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(self.rows, v.len(), "tr_matvec dimension mismatch");
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
    }

    pub fn add(&self, other: &Mat) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    /// `self += s · other`.
    pub fn add_scaled_in_place(&mut self, s: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &a| m.max(a.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|a| a.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= rel_tol * self.max_abs()
    }

    pub fn check_finite(&self) -> Result<(), LinalgError> {
        if self.data.iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(LinalgError::NonFinite)
        }
    }

    fn require_square(&self) -> Result<(), LinalgError> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols })
        }
    }
}

/// A square symmetric positive-definite matrix. Construction validates both
/// properties.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMat(Mat);

impl SpdMat {
    pub fn new(m: Mat) -> Result<Self, LinalgError> {
        m.require_square()?;
        m.check_finite()?;
        if !m.is_symmetric(SYMMETRY_TOL) {
            return Err(LinalgError::NotSymmetric { asymmetry: m.asymmetry() });
        }
        Cholesky::factor(&m)?;
        Ok(Self(m))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }
}

impl AsRef<Mat> for SpdMat {
    fn as_ref(&self) -> &Mat {
        &self.0
    }
}

/// Cholesky factor `M = F Fᵀ` with `F` lower triangular.
///
/// Only the lower triangle of the input is read.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Mat,
}

impl Cholesky {
    pub fn factor(m: &Mat) -> Result<Self, LinalgError> {
        m.require_square()?;
        let mut factor = m.clone();
        factor_in_place(&mut factor)?;
        Ok(Self { factor })
    }

    /// Lower-triangular factor with the strict upper triangle zeroed.
    pub fn lower(&self) -> &Mat {
        &self.factor
    }

    pub fn into_lower(self) -> Mat {
        self.factor
    }

    pub fn dim(&self) -> usize {
        self.factor.rows
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        solve_in_place(&self.factor, &mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        solve_in_place(&self.factor, b);
    }

    /// Solves `F y = b` (forward substitution only).
    pub fn forward_in_place(&self, b: &mut [f64]) {
        forward_in_place(&self.factor, b);
    }

    /// `M⁻¹ B` for a matrix right-hand side.
    pub fn solve_mat(&self, b: &Mat) -> Mat {
        assert_eq!(b.rows, self.dim());
        let mut out = Mat::zeros(b.rows, b.cols);
        let mut col = vec![0.0; b.rows];
        for j in 0..b.cols {
            for i in 0..b.rows {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..b.rows {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat {
        let inv = self.solve_mat(&Mat::identity(self.dim()));
        inv.symmetrized()
    }
}

/// In-place Cholesky: on success `m` holds `F` in its lower triangle and
/// zeros above the diagonal.
pub fn factor_in_place(m: &mut Mat) -> Result<(), LinalgError> {
    let n = m.rows;
    debug_assert_eq!(n, m.cols);
    let a = &mut m.data;
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !diag.is_finite() || diag <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: diag });
        }
        let d = diag.sqrt();
        a[j * n + j] = d;
        let inv_d = 1.0 / d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s * inv_d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

#[inline]
fn forward_in_place(f: &Mat, b: &mut [f64]) {
    let n = f.rows;
    let a = &f.data;
    for i in 0..n {
        let row = &a[i * n..i * n + i];
        let s = b[i] - dot(row, &b[..i]);
        b[i] = s / a[i * n + i];
    }
}

/// Solves `F Fᵀ x = b` given the lower factor `F`.
#[inline]
pub fn solve_in_place(f: &Mat, b: &mut [f64]) {
    let n = f.rows;
    assert_eq!(b.len(), n, "solve dimension mismatch");
    forward_in_place(f, b);
    let a = &f.data;
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
}

/// Solves `M x = b` for symmetric positive-definite `M` via Cholesky.
pub fn solve_spd(m: &SpdMat, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != m.dim() {
        return Err(LinalgError::DimensionMismatch { expected: m.dim(), got: b.len() });
    }
    Ok(Cholesky::factor(m.as_mat())?.solve(b))
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn inverse_spd(m: &SpdMat) -> Result<Mat, LinalgError> {
    Ok(Cholesky::factor(m.as_mat())?.inverse())
}

/// Lower-triangular `F` with `F Fᵀ = M`.
pub fn cholesky_factor(m: &SpdMat) -> Result<Mat, LinalgError> {
    Ok(Cholesky::factor(m.as_mat())?.into_lower())
}

pub fn trace(m: &Mat) -> f64 {
    assert!(m.is_square(), "trace of a non-square matrix");
    (0..m.rows).map(|i| m[(i, i)]).sum()
}

/// `tr{A B}` without forming the product.
pub fn trace_of_product(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.cols, b.rows);
    assert_eq!(a.rows, b.cols);
    let mut s = 0.0;
    for i in 0..a.rows {
        for k in 0..a.cols {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>, LinalgError> {
    m.require_square()?;
    m.check_finite()?;
    let n = m.rows;
    let mut a = m.symmetrized();
    let scale = a.norm_fro();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _ in 0..JACOBI_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            let mut eig = a.diag();
            eig.sort_by(f64::total_cmp);
            return Ok(eig);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
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
    Err(LinalgError::NoConvergence { iterations: JACOBI_SWEEPS })
}

/// Largest eigenvalue of a symmetric positive-semidefinite matrix by power
/// iteration.
pub fn power_iteration_psd(m: &Mat, rel_tol: f64, cap: usize) -> Result<f64, LinalgError> {
    m.require_square()?;
    let n = m.rows;
    // fixed, non-degenerate start vector so the result is deterministic
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..cap {
        m.matvec_into(&v, &mut w);
        let next = dot(&v, &w);
        let norm = norm2(&w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(LinalgError::NoConvergence { iterations: cap })
}

/// Spectral norm `‖M‖₂ = sqrt(λmax(MᵀM))` by power iteration.
///
/// This upper-bounds the spectral radius of any square matrix and equals it
/// for normal matrices.
pub fn operator_norm(m: &Mat) -> Result<f64, LinalgError> {
    let gram = m.transpose().matmul(m);
    Ok(power_iteration_psd(&gram, 1e-14, POWER_ITER_CAP)?.max(0.0).sqrt())
}

/// Largest absolute eigenvalue.
///
/// Symmetric inputs go through the Jacobi eigensolver. Any other square
/// input falls back to [`operator_norm`], which is only an upper bound; the
/// performance model never takes that path because it evaluates every
/// non-symmetric product through a symmetric similarity transform.
pub fn spectral_radius(m: &Mat) -> Result<f64, LinalgError> {
    m.require_square()?;
    if m.is_symmetric(SYMMETRY_TOL) {
        let eig = symmetric_eigenvalues(m)?;
        Ok(eig.iter().fold(0.0_f64, |r, e| r.max(e.abs())))
    } else {
        operator_norm(m)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    norm2_sq(a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn normalize(a: &mut [f64]) {
    let n = norm2(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_from_seed(n: usize, seed: u64) -> Mat {
        // deterministic pseudo-random SPD without pulling an RNG in here
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let z = Mat::from_fn(n, n, |_, _| next());
        z.matmul(&z.transpose()).add(&Mat::identity(n).scale(0.1))
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let i3 = SpdMat::new(Mat::identity(3)).unwrap();
        assert_eq!(solve_spd(&i3, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let d = SpdMat::new(Mat::from_diag(&[2.0, 4.0])).unwrap();
        let x = solve_spd(&d, &[2.0, 4.0]).unwrap();
        assert!(norm_inf(&sub(&x, &[1.0, 1.0])) < 1e-15);
    }

    #[test]
    fn inverse_diagonal_and_identity() {
        let d = SpdMat::new(Mat::from_diag(&[2.0, 5.0])).unwrap();
        let inv = inverse_spd(&d).unwrap();
        assert!(inv.sub(&Mat::from_diag(&[0.5, 0.2])).max_abs() < 1e-15);
        let i7 = SpdMat::new(Mat::identity(7)).unwrap();
        assert_eq!(inverse_spd(&i7).unwrap(), Mat::identity(7));
    }

    #[test]
    fn cholesky_diagonal() {
        let m = SpdMat::new(Mat::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(cholesky_factor(&m).unwrap(), Mat::from_diag(&[2.0, 3.0]));
        let i5 = SpdMat::new(Mat::identity(5)).unwrap();
        assert_eq!(cholesky_factor(&i5).unwrap(), Mat::identity(5));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            Cholesky::factor(&m),
            Err(LinalgError::NotPositiveDefinite { index: 1, .. })
        ));
        assert!(matches!(SpdMat::new(m), Err(LinalgError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn spd_rejects_asymmetric() {
        let m = Mat::from_rows(&[vec![2.0, 0.5], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(SpdMat::new(m), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn trace_basics() {
        assert_eq!(trace(&Mat::identity(5)), 5.0);
        assert_eq!(trace(&Mat::from_diag(&[1.0, 2.0, 3.0])), 6.0);
        let a = spd_from_seed(4, 3);
        let b = Mat::from_fn(4, 4, |i, j| (i as f64 - 2.0 * j as f64).sin());
        let ab = trace(&a.matmul(&b));
        let ba = trace(&b.matmul(&a));
        assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        assert!((trace_of_product(&a, &b) - ab).abs() <= 1e-12 * ab.abs().max(1.0));
    }

    #[test]
    fn spectral_radius_diagonal() {
        let m = Mat::from_diag(&[0.5, -0.9]);
        assert!((spectral_radius(&m).unwrap() - 0.9).abs() < 1e-14);
    }

    #[test]
    fn spectral_radius_projector_is_one() {
        let c = Mat::from_rows(&[vec![1.0, 0.3], vec![0.2, -1.0], vec![0.5, 0.5], vec![-0.7, 0.1]])
            .unwrap();
        let ctc = SpdMat::new(c.transpose().matmul(&c).symmetrized()).unwrap();
        let p = c.matmul(&inverse_spd(&ctc).unwrap()).matmul(&c.transpose()).symmetrized();
        assert!((spectral_radius(&p).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn operator_norm_bounds_radius_for_nonsymmetric() {
        let m = Mat::from_rows(&[vec![0.5, 2.0], vec![0.0, 0.25]]).unwrap();
        let r = spectral_radius(&m).unwrap();
        assert!(r >= 0.5);
    }

    #[test]
    fn factor_is_exactly_lower() {
        let m = spd_from_seed(6, 11);
        let f = Cholesky::factor(&m).unwrap().into_lower();
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert_eq!(f[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let m = SpdMat::new(Mat::identity(3)).unwrap();
        assert!(matches!(
            solve_spd(&m, &[1.0, 2.0]),
            Err(LinalgError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn mat_json_is_rows() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        let back: Mat = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Mat>("[[1.0],[2.0,3.0]]").is_err());
    }
}
