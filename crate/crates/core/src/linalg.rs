//! Small dense matrices (row-major) and the matrix exponential.
//!
//! The hot loops of the simulators work with d ≤ 4 matrices, so this type is
//! deliberately thin; decompositions that need a real eigensolver are
//! delegated to nalgebra.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Matrix { rows, cols, data: data.to_vec() }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matrix product shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            *yi = dot(self.row(i), x);
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    fn axpy(&mut self, s: f64, other: &Matrix) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.sub(other).norm_max()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Solves `self · X = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.rows;
        if !self.is_square() || b.rows != n {
            return Err(Error::Dimension { expected: n, got: b.rows });
        }
        let m = b.cols;
        let mut a = self.clone();
        let mut x = b.clone();
        let scale = self.norm_max().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let (piv, pval) = (col..n)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pval <= scale * 1e-300 || pval == 0.0 {
                return Err(Error::SingularBasis { condition: f64::INFINITY });
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                }
                for j in 0..m {
                    x.data.swap(col * m + j, piv * m + j);
                }
            }
            let p = a[(col, col)];
            for r in (col + 1)..n {
                let f = a[(r, col)] / p;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    let v = a[(col, j)];
                    a[(r, j)] -= f * v;
                }
                for j in 0..m {
                    let v = x[(col, j)];
                    x[(r, j)] -= f * v;
                }
            }
        }
        for col in (0..n).rev() {
            let p = a[(col, col)];
            for j in 0..m {
                let mut s = x[(col, j)];
                for k in (col + 1)..n {
                    s -= a[(col, k)] * x[(k, j)];
                }
                x[(col, j)] = s / p;
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.solve(&Matrix::identity(self.rows))
    }

    pub fn determinant(&self) -> f64 {
        self.to_nalgebra().determinant()
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self.to_nalgebra().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
        sv
    }

    /// Spectral norm ‖A‖₂.
    pub fn spectral_norm(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }

    /// 2-norm condition number σ_max/σ_min (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let sv = self.singular_values();
        match (sv.first(), sv.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        }
    }

    /// Eigenvalues as (re, im) pairs from a real Schur decomposition.
    pub fn eigenvalues(&self) -> Result<Vec<(f64, f64)>> {
        if !self.is_square() {
            return Err(Error::Dimension { expected: self.rows, got: self.cols });
        }
        let m = self.to_nalgebra();
        let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 10_000)
            .ok_or(Error::NoConvergence { what: "Schur decomposition", iterations: 10_000 })?;
        Ok(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// Padé(13,13) coefficients b_k/b_0 and the 1-norm threshold θ₁₃ below which
// the approximant is accurate to unit roundoff (Higham 2005).
const PADE13: [f64; 14] = [
    1.0,
    0.5,
    0.12,
    0.018_333_333_333_333_333,
    0.001_992_753_623_188_405_7,
    0.000_163_043_478_260_869_58,
    1.035_196_687_370_600_3e-5,
    5.175_983_436_853_002e-7,
    2.043_151_356_652_500_8e-8,
    6.306_022_705_717_595e-10,
    1.483_770_048_404_14e-11,
    2.529_153_491_597_966e-13,
    2.810_170_546_219_962_3e-15,
    1.544_049_750_670_308_8e-17,
];
pub const EXPM_THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant: A is scaled by 2^{-s} so that ‖A/2^s‖₁ ≤ θ₁₃, then the
/// approximant is squared s times.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.rows;
    if !a.is_finite() {
        return Err(Error::Range("matrix exponential of a non-finite matrix".into()));
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a.data[i * n + j] == 0.0));
    if diagonal {
        let d: Vec<f64> = (0..n).map(|i| a.data[i * n + i].exp()).collect();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("matrix exponential overflows".into()));
        }
        return Ok(Matrix::diagonal(&d));
    }
    let norm = a.norm_one();
    let s = if norm > EXPM_THETA13 { (norm / EXPM_THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a.scaled(2f64.powi(-s));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = r.mul(&r);
    }
    if !r.is_finite() {
        return Err(Error::Range("matrix exponential overflows".into()));
    }
    Ok(r)
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    let eye = Matrix::identity(n);
    let a2 = a.mul(a);
    let a4 = a2.mul(&a2);
    let a6 = a2.mul(&a4);
    let c = &PADE13;

    let mut w1 = a6.scaled(c[13]);
    w1.axpy(c[11], &a4);
    w1.axpy(c[9], &a2);
    let mut w2 = w1.mul(&a6);
    w2.axpy(c[7], &a6);
    w2.axpy(c[5], &a4);
    w2.axpy(c[3], &a2);
    w2.axpy(c[1], &eye);
    let u = a.mul(&w2);

    let mut v1 = a6.scaled(c[12]);
    v1.axpy(c[10], &a4);
    v1.axpy(c[8], &a2);
    let mut v = v1.mul(&a6);
    v.axpy(c[6], &a6);
    v.axpy(c[4], &a4);
    v.axpy(c[2], &a2);
    v.axpy(c[0], &eye);

    v.sub(&u).solve(&v.add(&u))
}

/// Tabulated e^{uA} for u in a fixed range: e^{uA}x = e^{δA}(e^{kΔA}x) with
/// the table entry e^{kΔA} and a Taylor polynomial for |δ| ≤ Δ/2.
#[derive(Clone, Debug)]
pub struct ExpTable {
    a: Matrix,
    lo: f64,
    step: f64,
    entries: Vec<Matrix>,
    taylor_terms: usize,
}

impl ExpTable {
    /// Table over [lo, hi] with spacing `step`; the Taylor degree is chosen
    /// so the truncation error is below 1e-16 relative.
    pub fn new(a: &Matrix, lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo < hi && step > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidInput("exponential table needs lo < hi and a positive step".into()));
        }
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let mut entries = Vec::with_capacity(n);
        for k in 0..n {
            entries.push(expm(&a.scaled(lo + k as f64 * step))?);
        }
        let z = 0.5 * step * a.norm_one();
        let (mut term, mut taylor_terms) = (1.0, 0);
        while term > 1e-17 && taylor_terms < 30 {
            taylor_terms += 1;
            term *= z / taylor_terms as f64;
        }
        Ok(ExpTable { a: a.clone(), lo, step, entries, taylor_terms })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + (self.entries.len() - 1) as f64 * self.step)
    }

    pub fn contains(&self, u: f64) -> bool {
        let (lo, hi) = self.range();
        u >= lo && u <= hi
    }

    /// out = e^{uA}x. Panics if u lies outside the table range.
    pub fn apply(&self, u: f64, x: &[f64], out: &mut [f64]) {
        assert!(self.contains(u), "u = {u} outside the exponential table");
        let k = (((u - self.lo) / self.step).round() as usize).min(self.entries.len() - 1);
        let delta = u - (self.lo + k as f64 * self.step);
        let n = x.len();
        let mut base = [0.0f64; 8];
        let mut tmp = [0.0f64; 8];
        assert!(n <= 8, "exponential tables support d ≤ 8");
        self.entries[k].mul_vec_into(x, &mut base[..n]);
        // Horner: y = b + δA(b + δA/2(b + … ))
        out.copy_from_slice(&base[..n]);
        for j in (1..=self.taylor_terms).rev() {
            self.a.mul_vec_into(out, &mut tmp[..n]);
            let c = delta / j as f64;
            for i in 0..n {
                out[i] = base[i] + c * tmp[i];
            }
        }
    }
}
