//! Dense extended-precision linear algebra.
//!
//! Everything here works on MPFR floats at an explicit mantissa precision.
//! The matrices are small (Gram blocks up to a few hundred rows), so the
//! kernels are straightforward dense loops; the interesting requirements are
//! determinism and headroom at 128-512 bits.

use std::fmt;

use rug::ops::CompleteRound;
use rug::{Assign, Float, Rational};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix dimensions incompatible: {0}")]
    Shape(String),
    #[error("matrix not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
    #[error("matrix must be symmetric")]
    NonSymmetric,
}

/// Dense row-major matrix of `Float`s, all at the same precision.
#[derive(Clone, PartialEq)]
pub struct FloatMat {
    rows: usize,
    cols: usize,
    prec: u32,
    data: Vec<Float>,
}

impl fmt::Debug for FloatMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "FloatMat {}x{} @{} bits", self.rows, self.cols, self.prec)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = (0..self.cols.min(8))
                .map(|j| format!("{:.6e}", self.at(i, j).to_f64()))
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl FloatMat {
    pub fn zeros(prec: u32, rows: usize, cols: usize) -> Self {
        FloatMat {
            rows,
            cols,
            prec,
            data: (0..rows * cols).map(|_| Float::new(prec)).collect(),
        }
    }

    pub fn identity(prec: u32, n: usize) -> Self {
        let mut m = Self::zeros(prec, n, n);
        for i in 0..n {
            m.set_f64(i, i, 1.0);
        }
        m
    }

    pub fn scaled_identity(prec: u32, n: usize, s: &Float) -> Self {
        let mut m = Self::zeros(prec, n, n);
        for i in 0..n {
            m.data[i * n + i].assign(s);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &Float {
        &self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Float {
        &mut self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: &Float) {
        self.data[i * self.cols + j].assign(v);
    }

    pub fn set_f64(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j].assign(v);
    }

    pub fn set_rational(&mut self, i: usize, j: usize, v: &Rational) {
        self.data[i * self.cols + j].assign(v);
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> FloatMat {
        let mut out = FloatMat::zeros(self.prec, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn add(&self, other: &FloatMat) -> FloatMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &FloatMat) -> FloatMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: &Float) -> FloatMat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: &Float, other: &FloatMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut scratch = Float::new(self.prec);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            scratch.assign(s * b);
            *a += &scratch;
        }
    }

    pub fn matmul(&self, other: &FloatMat) -> FloatMat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = FloatMat::zeros(self.prec, self.rows, other.cols);
        let mut scratch = Float::new(self.prec);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.at(i, k);
                if aik.is_zero() {
                    continue;
                }
                let orow = k * other.cols;
                let trow = i * other.cols;
                for j in 0..other.cols {
                    scratch.assign(aik * &other.data[orow + j]);
                    out.data[trow + j] += &scratch;
                }
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &FloatMat) -> FloatMat {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = FloatMat::zeros(self.prec, self.cols, other.cols);
        let mut scratch = Float::new(self.prec);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let aki = self.at(k, i);
                if aki.is_zero() {
                    continue;
                }
                let orow = k * other.cols;
                let trow = i * other.cols;
                for j in 0..other.cols {
                    scratch.assign(aki * &other.data[orow + j]);
                    out.data[trow + j] += &scratch;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Float]) -> Vec<Float> {
        assert_eq!(self.cols, v.len());
        let mut out: Vec<Float> = (0..self.rows).map(|_| Float::new(self.prec)).collect();
        let mut scratch = Float::new(self.prec);
        for i in 0..self.rows {
            for j in 0..self.cols {
                scratch.assign(self.at(i, j) * &v[j]);
                out[i] += &scratch;
            }
        }
        out
    }

    /// Frobenius inner product `<self, other>`.
    pub fn inner(&self, other: &FloatMat) -> Float {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut acc = Float::new(self.prec);
        let mut scratch = Float::new(self.prec);
        for (a, b) in self.data.iter().zip(&other.data) {
            scratch.assign(a * b);
            acc += &scratch;
        }
        acc
    }

    pub fn trace(&self) -> Float {
        assert!(self.is_square());
        let mut acc = Float::new(self.prec);
        for i in 0..self.rows {
            acc += self.at(i, i);
        }
        acc
    }

    pub fn max_abs(&self) -> Float {
        let mut best = Float::new(self.prec);
        for a in &self.data {
            let mag = a.clone().abs();
            if mag > best {
                best = mag;
            }
        }
        best
    }

    /// Forces exact symmetry by averaging with the transpose.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        let n = self.rows;
        let mut avg = Float::new(self.prec);
        for i in 0..n {
            for j in (i + 1)..n {
                avg.assign(self.at(i, j) + self.at(j, i));
                avg /= 2u32;
                self.data[i * n + j].assign(&avg);
                self.data[j * n + i].assign(&avg);
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if self.at(i, j) != self.at(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Converts to a different precision (rounding each entry).
    pub fn with_prec(&self, prec: u32) -> FloatMat {
        let mut out = FloatMat::zeros(prec, self.rows, self.cols);
        for (dst, src) in out.data.iter_mut().zip(&self.data) {
            dst.assign(src);
        }
        out
    }

    /// Cholesky factorization `self = L L^T` for symmetric positive definite
    /// input. Returns the lower factor.
    pub fn cholesky(&self) -> Result<FloatMat, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Shape("cholesky needs a square matrix".into()));
        }
        let n = self.rows;
        let prec = self.prec;
        let mut l = FloatMat::zeros(prec, n, n);
        let mut acc = Float::new(prec);
        let mut scratch = Float::new(prec);
        for j in 0..n {
            acc.assign(self.at(j, j));
            for k in 0..j {
                scratch.assign(l.at(j, k) * l.at(j, k));
                acc -= &scratch;
            }
            if acc <= 0 {
                return Err(LinalgError::NotPositiveDefinite {
                    pivot: acc.to_f64(),
                    index: j,
                });
            }
            let ljj = acc.clone().sqrt();
            l.set(j, j, &ljj);
            for i in (j + 1)..n {
                acc.assign(self.at(i, j));
                for k in 0..j {
                    scratch.assign(l.at(i, k) * l.at(j, k));
                    acc -= &scratch;
                }
                acc /= &ljj;
                l.set(i, j, &acc);
            }
        }
        Ok(l)
    }

    /// Cholesky with a diagonal perturbation fallback: on a failed pivot the
    /// whole diagonal is shifted by an escalating multiple of `max_abs` and
    /// the factorization retried. Returns the factor and the shift used.
    pub fn cholesky_perturbed(&self) -> Result<(FloatMat, Float), LinalgError> {
        match self.cholesky() {
            Ok(l) => Ok((l, Float::new(self.prec))),
            Err(_) => {
                let scale = self.max_abs();
                let mut shift = Float::with_val(self.prec, 2f64.powi(-(self.prec as i32) + 8));
                shift *= &scale;
                for _ in 0..80 {
                    let mut shifted = self.clone();
                    for i in 0..self.rows {
                        *shifted.at_mut(i, i) += &shift;
                    }
                    if let Ok(l) = shifted.cholesky() {
                        return Ok((l, shift));
                    }
                    shift *= 16u32;
                }
                Err(LinalgError::NotPositiveDefinite {
                    pivot: f64::NAN,
                    index: 0,
                })
            }
        }
    }

    /// Solves `L x = b` for lower-triangular `L`.
    pub fn solve_lower(&self, b: &[Float]) -> Vec<Float> {
        let n = self.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<Float> = b.to_vec();
        let mut scratch = Float::new(self.prec);
        for i in 0..n {
            for k in 0..i {
                scratch.assign(self.at(i, k) * &x[k]);
                x[i] -= &scratch;
            }
            x[i] /= self.at(i, i);
        }
        x
    }

    /// Solves `L^T x = b` for lower-triangular `L`.
    pub fn solve_lower_t(&self, b: &[Float]) -> Vec<Float> {
        let n = self.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<Float> = b.to_vec();
        let mut scratch = Float::new(self.prec);
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                scratch.assign(self.at(k, i) * &x[k]);
                x[i] -= &scratch;
            }
            x[i] /= self.at(i, i);
        }
        x
    }

    /// Solves `A x = b` given the Cholesky factor `L` of `A` (self = L).
    pub fn chol_solve(&self, b: &[Float]) -> Vec<Float> {
        self.solve_lower_t(&self.solve_lower(b))
    }

    /// Solves `L X = B` column-wise for a matrix right-hand side.
    pub fn solve_lower_mat(&self, b: &FloatMat) -> FloatMat {
        assert_eq!(self.rows, b.rows);
        let mut out = FloatMat::zeros(self.prec, b.rows, b.cols);
        let mut scratch = Float::new(self.prec);
        for j in 0..b.cols {
            for i in 0..b.rows {
                let mut v = b.at(i, j).clone();
                for k in 0..i {
                    scratch.assign(self.at(i, k) * out.at(k, j));
                    v -= &scratch;
                }
                v /= self.at(i, i);
                out.set(i, j, &v);
            }
        }
        out
    }

    /// Inverse of a symmetric positive definite matrix via its Cholesky
    /// factor (self = L).
    pub fn chol_inverse(&self) -> FloatMat {
        let n = self.rows;
        let mut inv = FloatMat::zeros(self.prec, n, n);
        let mut e: Vec<Float> = (0..n).map(|_| Float::new(self.prec)).collect();
        for j in 0..n {
            e[j].assign(1);
            let col = self.chol_solve(&e);
            for i in 0..n {
                inv.set(i, j, &col[i]);
            }
            e[j].assign(0);
        }
        inv.symmetrize();
        inv
    }

    /// Eigenvalues (and optionally eigenvectors) of a symmetric matrix by
    /// the cyclic Jacobi method. Returns eigenvalues in ascending order plus
    /// the final off-diagonal Frobenius norm as a convergence witness.
    pub fn jacobi_eigen(
        &self,
        want_vectors: bool,
    ) -> Result<JacobiEigen, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Shape("jacobi needs a square matrix".into()));
        }
        let n = self.rows;
        let prec = self.prec;
        let mut a = self.clone();
        a.symmetrize();
        let mut v = if want_vectors {
            Some(FloatMat::identity(prec, n))
        } else {
            None
        };
        // Stop once the off-diagonal mass is negligible relative to the
        // matrix scale at this precision.
        let scale = {
            let s = a.max_abs();
            if s.is_zero() {
                Float::with_val(prec, 1)
            } else {
                s
            }
        };
        let tol = Float::with_val(prec, 2f64.powi(-(prec as i32) + 4)) * &scale;
        let max_sweeps = 60;
        let mut theta = Float::new(prec);
        let mut t = Float::new(prec);
        let mut sq = Float::new(prec);
        for _ in 0..max_sweeps {
            let mut off = Float::new(prec);
            let mut sc = Float::new(prec);
            for p in 0..n {
                for q in (p + 1)..n {
                    sc.assign(a.at(p, q) * a.at(p, q));
                    off += &sc;
                }
            }
            let off_norm = off.sqrt();
            if off_norm <= tol {
                break;
            }
            for p in 0..(n - 1) {
                for q in (p + 1)..n {
                    let apq = a.at(p, q).clone();
                    if apq.clone().abs() <= Float::with_val(prec, 0) {
                        continue;
                    }
                    // Classical 2x2 symmetric Schur decomposition.
                    theta.assign(a.at(q, q) - a.at(p, p));
                    theta /= 2u32;
                    theta /= &apq;
                    sq.assign(&theta * &theta);
                    sq += 1u32;
                    let root = sq.clone().sqrt();
                    let theta_abs = theta.clone().abs();
                    t.assign(&theta_abs + &root);
                    t.recip_mut();
                    if theta < 0 {
                        t = -t.clone();
                    }
                    sq.assign(&t * &t);
                    sq += 1u32;
                    let c = sq.clone().sqrt().recip();
                    let s = (&t * &c).complete(prec);
                    apply_rotation(&mut a, p, q, &c, &s);
                    if let Some(vm) = v.as_mut() {
                        rotate_columns(vm, p, q, &c, &s);
                    }
                }
            }
        }
        let mut off = Float::new(prec);
        let mut sc = Float::new(prec);
        for p in 0..n {
            for q in (p + 1)..n {
                sc.assign(a.at(p, q) * a.at(p, q));
                off += &sc;
            }
        }
        let off_norm = off.sqrt();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a.at(i, i).partial_cmp(a.at(j, j)).unwrap());
        let values: Vec<Float> = order.iter().map(|&i| a.at(i, i).clone()).collect();
        let vectors = v.map(|vm| {
            let mut sorted = FloatMat::zeros(prec, n, n);
            for (new_j, &old_j) in order.iter().enumerate() {
                for i in 0..n {
                    sorted.set(i, new_j, vm.at(i, old_j));
                }
            }
            sorted
        });
        Ok(JacobiEigen {
            values,
            vectors,
            off_norm,
        })
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn min_eigenvalue(&self) -> Result<Float, LinalgError> {
        Ok(self.jacobi_eigen(false)?.values[0].clone())
    }

    /// `V f(L) V^T` for a symmetric matrix with eigendecomposition supplied
    /// entry-wise by `f` on the eigenvalues.
    pub fn sym_map(&self, f: impl Fn(&Float) -> Float) -> Result<FloatMat, LinalgError> {
        let eig = self.jacobi_eigen(true)?;
        let v = eig.vectors.expect("vectors requested");
        let n = self.rows;
        let mut scaled = v.clone();
        for j in 0..n {
            let fj = f(&eig.values[j]);
            for i in 0..n {
                *scaled.at_mut(i, j) *= &fj;
            }
        }
        let mut out = scaled.matmul(&v.transpose());
        out.symmetrize();
        Ok(out)
    }
}

pub struct JacobiEigen {
    /// Ascending eigenvalues.
    pub values: Vec<Float>,
    pub vectors: Option<FloatMat>,
    /// Final off-diagonal Frobenius norm (convergence witness).
    pub off_norm: Float,
}

/// Applies the Jacobi rotation J(p,q,c,s) as A <- J^T A J, exploiting
/// symmetry.
fn apply_rotation(a: &mut FloatMat, p: usize, q: usize, c: &Float, s: &Float) {
    let n = a.rows();
    let prec = a.prec();
    let mut t1 = Float::new(prec);
    let mut t2 = Float::new(prec);
    let app = a.at(p, p).clone();
    let aqq = a.at(q, q).clone();
    let apq = a.at(p, q).clone();
    // Diagonal and pivot entries.
    t1.assign(c * c);
    t1 *= &app;
    t2.assign(s * s);
    t2 *= &aqq;
    let mut cross = Float::new(prec);
    cross.assign(c * s);
    cross *= &apq;
    cross *= 2u32;
    let new_pp = (&t1 + &t2).complete(prec) - &cross;
    t1.assign(s * s);
    t1 *= &app;
    t2.assign(c * c);
    t2 *= &aqq;
    let new_qq = (&t1 + &t2).complete(prec) + &cross;
    a.set(p, p, &new_pp);
    a.set(q, q, &new_qq);
    a.set_f64(p, q, 0.0);
    a.set_f64(q, p, 0.0);
    for i in 0..n {
        if i == p || i == q {
            continue;
        }
        let aip = a.at(i, p).clone();
        let aiq = a.at(i, q).clone();
        t1.assign(c * &aip);
        t2.assign(s * &aiq);
        let new_ip = (&t1 - &t2).complete(prec);
        t1.assign(s * &aip);
        t2.assign(c * &aiq);
        let new_iq = (&t1 + &t2).complete(prec);
        a.set(i, p, &new_ip);
        a.set(p, i, &new_ip);
        a.set(i, q, &new_iq);
        a.set(q, i, &new_iq);
    }
}

/// Applies the rotation to columns p and q of V (for eigenvector
/// accumulation): V <- V J.
fn rotate_columns(v: &mut FloatMat, p: usize, q: usize, c: &Float, s: &Float) {
    let n = v.rows();
    let prec = v.prec();
    let mut t1 = Float::new(prec);
    let mut t2 = Float::new(prec);
    for i in 0..n {
        let vip = v.at(i, p).clone();
        let viq = v.at(i, q).clone();
        t1.assign(c * &vip);
        t2.assign(s * &viq);
        let new_ip = (&t1 - &t2).complete(prec);
        t1.assign(s * &vip);
        t2.assign(c * &viq);
        let new_iq = (&t1 + &t2).complete(prec);
        v.set(i, p, &new_ip);
        v.set(i, q, &new_iq);
    }
}

/// Vector helpers over `Float` slices.
pub fn dot(a: &[Float], b: &[Float], prec: u32) -> Float {
    assert_eq!(a.len(), b.len());
    let mut acc = Float::new(prec);
    let mut scratch = Float::new(prec);
    for (x, y) in a.iter().zip(b) {
        scratch.assign(x * y);
        acc += &scratch;
    }
    acc
}

pub fn max_abs_vec(v: &[Float]) -> Float {
    let prec = v.first().map(|f| f.prec()).unwrap_or(53);
    let mut best = Float::new(prec);
    for x in v {
        let mag = x.clone().abs();
        if mag > best {
            best = mag;
        }
    }
    best
}

/// Exact rational Gaussian elimination with partial pivoting.
///
/// Returns `None` when the system is singular or inconsistent.
pub fn rat_solve(mut a: Vec<Vec<Rational>>, mut b: Vec<Rational>) -> Option<Vec<Rational>> {
    let n = a.len();
    if n == 0 || a.iter().any(|row| row.len() != n) || b.len() != n {
        return None;
    }
    for col in 0..n {
        let pivot_row = (col..n).find(|&r| a[r][col] != 0)?;
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col].clone();
        for r in (col + 1)..n {
            if a[r][col] == 0 {
                continue;
            }
            let factor = Rational::from(&a[r][col] / &pivot);
            for c in col..n {
                let sub = Rational::from(&factor * &a[col][c]);
                a[r][c] -= sub;
            }
            let sub = Rational::from(&factor * &b[col]);
            b[r] -= sub;
        }
    }
    let mut x = vec![Rational::new(); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for c in (row + 1)..n {
            acc -= Rational::from(&a[row][c] * &x[c]);
        }
        x[row] = acc / &a[row][row];
    }
    Some(x)
}

/// Exact positive-definiteness test for a symmetric rational matrix via
/// leading principal minors (Sylvester's criterion).
pub fn rat_is_positive_definite(a: &[Vec<Rational>]) -> bool {
    let n = a.len();
    if n == 0 || a.iter().any(|row| row.len() != n) {
        return false;
    }
    // Fraction-free Gaussian elimination tracking pivot signs.
    let mut m: Vec<Vec<Rational>> = a.to_vec();
    for col in 0..n {
        if m[col][col] <= 0 {
            return false;
        }
        let pivot = m[col][col].clone();
        for r in (col + 1)..n {
            if m[r][col] == 0 {
                continue;
            }
            let factor = Rational::from(&m[r][col] / &pivot);
            for c in col..n {
                let sub = Rational::from(&factor * &m[col][c]);
                m[r][c] -= sub;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(prec: u32, rows: &[&[f64]]) -> FloatMat {
        let mut m = FloatMat::zeros(prec, rows.len(), rows[0].len());
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set_f64(i, j, v);
            }
        }
        m
    }

    #[test]
    fn cholesky_recovers_known_factor() {
        let a = mat(128, &[&[4.0, 2.0], &[2.0, 5.0]]);
        let l = a.cholesky().unwrap();
        assert!((l.at(0, 0).to_f64() - 2.0).abs() < 1e-30);
        assert!((l.at(1, 0).to_f64() - 1.0).abs() < 1e-30);
        assert!((l.at(1, 1).to_f64() - 2.0).abs() < 1e-30);
        let x = l.chol_solve(&[Float::with_val(128, 8), Float::with_val(128, 9)]);
        assert!((x[0].to_f64() - 1.375).abs() < 1e-30);
        assert!((x[1].to_f64() - 1.25).abs() < 1e-30);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = mat(128, &[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            a.cholesky(),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
        let (_, shift) = a.cholesky_perturbed().expect("perturbation succeeds");
        // Min eigenvalue is -1, so any successful shift exceeds 1.
        assert!(shift.to_f64() > 1.0);
    }

    #[test]
    fn jacobi_small_cases() {
        let a = mat(192, &[&[1.0, 1.0], &[1.0, 1.0]]);
        let eig = a.jacobi_eigen(false).unwrap();
        assert!(eig.values[0].clone().abs().to_f64() < 1e-50);
        assert!((eig.values[1].to_f64() - 2.0).abs() < 1e-50);

        let b = mat(192, &[&[2.0, 1.0], &[1.0, 2.0]]);
        let eig = b.jacobi_eigen(false).unwrap();
        assert!((eig.values[0].to_f64() - 1.0).abs() < 1e-50);
        assert!((eig.values[1].to_f64() - 3.0).abs() < 1e-50);

        let id = FloatMat::identity(128, 5);
        let eig = id.jacobi_eigen(false).unwrap();
        assert!(eig.values.iter().all(|v| (v.to_f64() - 1.0).abs() < 1e-35));
    }

    #[test]
    fn jacobi_eigenvalues_sum_to_trace() {
        // Deterministic pseudo-random symmetric matrix.
        let n = 12;
        let mut a = FloatMat::zeros(192, n, n);
        let mut state = 1u64;
        for i in 0..n {
            for j in 0..=i {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                let v = ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
                a.set_f64(i, j, v);
                a.set_f64(j, i, v);
            }
        }
        let eig = a.jacobi_eigen(true).unwrap();
        let mut sum = Float::new(192);
        for v in &eig.values {
            sum += v;
        }
        let diff = (sum - a.trace()).abs();
        assert!(diff.to_f64() < 2f64.powi(-(192 - 8)));
        // Eigenvector residual: A v = lambda v.
        let v = eig.vectors.unwrap();
        let av = a.matmul(&v);
        for j in 0..n {
            for i in 0..n {
                let expect = (eig.values[j].clone() * v.at(i, j)).abs();
                let got = av.at(i, j).clone().abs();
                assert!((expect - got).abs().to_f64() < 1e-40);
            }
        }
    }

    #[test]
    fn sym_map_inverse_sqrt() {
        let a = mat(192, &[&[4.0, 0.0], &[0.0, 9.0]]);
        let isq = a.sym_map(|l| l.clone().sqrt().recip()).unwrap();
        assert!((isq.at(0, 0).to_f64() - 0.5).abs() < 1e-40);
        assert!((isq.at(1, 1).to_f64() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rational_solve_and_pd() {
        let a = vec![
            vec![Rational::from(2), Rational::from(1)],
            vec![Rational::from(1), Rational::from(3)],
        ];
        let b = vec![Rational::from(3), Rational::from(4)];
        let x = rat_solve(a.clone(), b).unwrap();
        assert_eq!(x[0], Rational::from(1));
        assert_eq!(x[1], Rational::from(1));
        assert!(rat_is_positive_definite(&a));
        let indef = vec![
            vec![Rational::from(1), Rational::from(2)],
            vec![Rational::from(2), Rational::from(1)],
        ];
        assert!(!rat_is_positive_definite(&indef));
    }
}
