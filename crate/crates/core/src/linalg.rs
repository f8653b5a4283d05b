//! Dense linear-algebra kernels.
//!
//! Everything here works on small dense row-major matrices (a few hundred rows
//! at most). The symmetric eigensolver is a cyclic Jacobi iteration; it is the
//! backbone of the logarithmic norm, the top symmetric direction and the
//! spectral norm.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error(
        "no convergence after {iterations} iterations (last estimate {last_estimate:e}, last change {last_change:e})"
    )]
    Convergence {
        iterations: usize,
        last_estimate: f64,
        last_change: f64,
    },
    #[error("result out of floating-point range: {0}")]
    Range(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense row-major matrix of finite reals.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Dimension(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// `self + c I`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        require_square(self)?;
        let mut m = self.clone();
        for i in 0..self.rows {
            m[(i, i)] += c;
        }
        Ok(m)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
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
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(LinalgError::Dimension(format!(
                "vector of length {} for {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetric_part(&self) -> Result<Self> {
        require_square(self)?;
        let n = self.rows;
        let mut s = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        Ok(s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn require_square(a: &Matrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LinalgError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.rows, a.cols
        )))
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigResult {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, in eigenvalue order.
    pub eigenvectors: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver for symmetric input.
///
/// Only the upper triangle is trusted; the input is symmetrized first so that
/// tiny asymmetries from round-off do not bias the rotation angles.
pub fn symmetric_eig(s: &Matrix) -> Result<SymmetricEigResult> {
    let mut a = s.symmetric_part()?;
    let n = a.rows;
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let tol = 1e-12 * scale;

    let off_norm = |a: &Matrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        acc.sqrt()
    };

    let mut sweeps = 0;
    let mut off = off_norm(&a);
    while off > tol {
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(LinalgError::Convergence {
                iterations: sweeps,
                last_estimate: off,
                last_change: off / scale.max(f64::MIN_POSITIVE),
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
        sweeps += 1;
        off = off_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[(row, col)] = v[(row, src)];
        }
    }
    Ok(SymmetricEigResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Applies the Jacobi rotation in the (p, q) plane that annihilates `a[p][q]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows;
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
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Euclidean logarithmic norm `λ_max((A + Aᵀ)/2)`.
pub fn log_norm_2(a: &Matrix) -> Result<f64> {
    require_square(a)?;
    let eig = symmetric_eig(&a.symmetric_part()?)?;
    Ok(eig.eigenvalues[0])
}

/// Gap below which the top of the symmetric spectrum is treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Top eigenpair of the symmetric part of `a`, with a reproducible choice of
/// eigenvector.
///
/// When the top eigenvalue is (nearly) degenerate the vector is the unit
/// vector in the top eigenspace with the largest first coordinate (falling back
/// to later coordinates when the eigenspace is orthogonal to the earlier
/// axes). Finally the sign is fixed so that the largest-magnitude entry is
/// positive.
pub fn top_symmetric_eigpair(a: &Matrix) -> Result<(f64, Vec<f64>)> {
    require_square(a)?;
    let n = a.rows;
    let eig = symmetric_eig(&a.symmetric_part()?)?;
    let top = eig.eigenvalues[0];
    let gap = DEGENERACY_GAP * top.abs().max(1.0);
    let dim = eig
        .eigenvalues
        .iter()
        .take_while(|&&l| top - l < gap)
        .count();
    let basis: Vec<Vec<f64>> = (0..dim).map(|c| eig.eigenvectors.column(c)).collect();

    let mut v = basis[0].clone();
    if dim > 1 {
        // Project successive coordinate axes onto the eigenspace; the
        // normalized projection of e_i maximizes the i-th coordinate.
        for axis in 0..n {
            let mut proj = vec![0.0; n];
            for b in &basis {
                let coef = b[axis];
                for (p, &bi) in proj.iter_mut().zip(b) {
                    *p += coef * bi;
                }
            }
            let len = norm2(&proj);
            if len > 1e-8 {
                v = proj.iter().map(|p| p / len).collect();
                break;
            }
        }
    }
    fix_sign(&mut v);
    Ok((top, v))
}

/// Flips `v` so that its largest-magnitude entry (first one on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Largest singular value, `sqrt(λ_max(AᵀA))`.
pub fn operator_norm_2(a: &Matrix) -> Result<f64> {
    let ata = a.transpose().matmul(a)?;
    let eig = symmetric_eig(&ata)?;
    Ok(eig.eigenvalues[0].max(0.0).sqrt())
}

const POWER_MAX_ITERS: usize = 10_000;

/// Spectral radius `max |λ(W)|`.
///
/// Power iteration from the all-ones vector plus a small index-dependent
/// perturbation. Several eigenvalues sharing the top modulus (periodic graphs,
/// complex pairs of non-normal matrices) make the Rayleigh-type ratio
/// oscillate; in that case the estimate falls back to the eigenvalues of the
/// real Schur form. The result is only used for stability-margin checks.
pub fn spectral_radius(w: &Matrix) -> Result<f64> {
    require_square(w)?;
    let n = w.rows;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * (i as f64 + 1.0) / n as f64).collect();
    let len = norm2(&v);
    v.iter_mut().for_each(|x| *x /= len);

    let mut estimate = 0.0;
    let mut change = f64::INFINITY;
    for iter in 0..POWER_MAX_ITERS {
        let next = w.matvec(&v)?;
        let len = norm2(&next);
        if len == 0.0 || !len.is_finite() {
            if len == 0.0 {
                return Ok(0.0);
            }
            return Err(LinalgError::Range("power iteration overflow".into()));
        }
        // Norm ratios of consecutive iterates converge to the top modulus.
        change = (len - estimate).abs();
        estimate = len;
        v = next.into_iter().map(|x| x / len).collect();
        if iter > 10 && change <= 1e-13 * estimate.max(1e-300) {
            let check = two_step_ratio(w, &v)?;
            if (check - estimate).abs() <= 1e-9 * estimate {
                return Ok(estimate);
            }
        }
        if estimate < 1e-200 {
            return Ok(0.0);
        }
    }
    // Ratio never settled: tied moduli, so use a Schur factorization.
    schur_spectral_radius(w).ok_or(LinalgError::Convergence {
        iterations: POWER_MAX_ITERS,
        last_estimate: estimate,
        last_change: change,
    })
}

fn two_step_ratio(w: &Matrix, v: &[f64]) -> Result<f64> {
    let w2 = w.matvec(&w.matvec(v)?)?;
    Ok(norm2(&w2).sqrt())
}

fn schur_spectral_radius(w: &Matrix) -> Option<f64> {
    let m = nalgebra::DMatrix::from_row_slice(w.rows, w.cols, &w.data);
    let ev = m.try_schur(1e-14, 100_000)?.complex_eigenvalues();
    Some(ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `e^{A t} v` by scaling and squaring with a truncated Taylor series.
///
/// Intended as a test oracle for the integrator.
pub fn expm_apply(a: &Matrix, v: &[f64], t: f64) -> Result<Vec<f64>> {
    require_square(a)?;
    if v.len() != a.rows {
        return Err(LinalgError::Dimension(format!(
            "vector of length {} for a {}x{} matrix",
            v.len(),
            a.rows,
            a.cols
        )));
    }
    if !t.is_finite() {
        return Err(LinalgError::Range(format!("time {t}")));
    }
    let at = a.scaled(t);
    let norm = at.one_norm();
    if norm > 1400.0 {
        return Err(LinalgError::Range(format!("|A t| = {norm:e} overflows")));
    }
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let small = at.scaled(scale);
    let n = a.rows;
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&small)?.scaled(1.0 / k as f64);
        result = result.add(&term)?;
        if term.one_norm() < 1e-18 * result.one_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    let out = result.matvec(v)?;
    if out.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::Range("matrix exponential overflow".into()));
    }
    Ok(out)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    require_square(a)?;
    let n = a.rows;
    if b.len() != n {
        return Err(LinalgError::Dimension("right-hand side length".into()));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap_or(col);
        if m[(pivot, col)].abs() < 1e-300 {
            return Err(LinalgError::Range("singular system".into()));
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            x.swap(col, pivot);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[(r, k)] -= f * m[(col, k)];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc -= m[(col, k)] * x[k];
        }
        x[col] = acc / m[(col, col)];
    }
    Ok(x)
}

/// Least-squares solution of `A x ≈ b` by Householder QR.
///
/// Returns `None` when `A` is numerically rank deficient (a diagonal entry of
/// `R` below `1e-12` times the largest one).
pub fn least_squares(a: &Matrix, b: &[f64]) -> Result<Option<Vec<f64>>> {
    let (m, n) = (a.rows, a.cols);
    if b.len() != m {
        return Err(LinalgError::Dimension("right-hand side length".into()));
    }
    if m < n {
        return Ok(None);
    }
    let mut r = a.clone();
    let mut qtb = b.to_vec();
    for k in 0..n {
        let alpha_sq: f64 = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum();
        let alpha = alpha_sq.sqrt();
        if alpha == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -alpha } else { alpha };
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        for j in k..n {
            let proj: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum::<f64>() * 2.0 / vnorm_sq;
            for i in k..m {
                r[(i, j)] -= proj * v[i - k];
            }
        }
        let proj: f64 = (k..m).map(|i| v[i - k] * qtb[i]).sum::<f64>() * 2.0 / vnorm_sq;
        for i in k..m {
            qtb[i] -= proj * v[i - k];
        }
    }
    let rmax = (0..n).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if rmax == 0.0 || (0..n).any(|k| r[(k, k)].abs() <= 1e-12 * rmax) {
        return Ok(None);
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut acc = qtb[k];
        for j in (k + 1)..n {
            acc -= r[(k, j)] * x[j];
        }
        x[k] = acc / r[(k, k)];
    }
    Ok(Some(x))
}
