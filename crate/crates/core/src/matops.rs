//! Symmetric-matrix vectorization, eigenvalue helpers and rank-aware solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Inner-product preserving vectorization of an `n x n` symmetric matrix.
///
/// Entries are the upper triangle in row-major order; off-diagonal entries
/// carry a factor of `sqrt(2)` so that `svec(A) . svec(B) = Tr(A B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymVec<T: Real> {
    entries: DVector<T>,
    n: usize,
}

impl<T: Real> SymVec<T> {
    /// Wraps raw entries, inferring `n` from the length.
    pub fn from_entries(entries: DVector<T>) -> Result<Self> {
        let n = side_from_len(entries.len()).ok_or(Error::BadLength(entries.len()))?;
        Ok(Self { entries, n })
    }

    pub fn entries(&self) -> &DVector<T> {
        &self.entries
    }

    pub fn into_entries(self) -> DVector<T> {
        self.entries
    }

    /// Source matrix dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.entries.dot(&other.entries)
    }
}

/// Feature dimension `n(n+1)/2`.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

fn side_from_len(len: usize) -> Option<usize> {
    // n^2 + n - 2 len = 0
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (sym_dim(n) == len).then_some(n)
}

/// Relative Frobenius asymmetry `||M - M^T||_F / ||M||_F` (zero for the zero matrix).
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> f64 {
    let norm = m.norm();
    if norm == T::zero() {
        return 0.0;
    }
    (m - m.transpose()).norm().to_f64_lossy() / norm.to_f64_lossy()
}

/// Returns `(M + M^T)/2` after checking the relative asymmetry tolerance.
pub fn symmetrize_checked<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(Error::DimMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = asymmetry(m);
    if asym > T::SYM_TOL || asym.is_nan() {
        return Err(Error::NonSymmetric { asymmetry: asym });
    }
    Ok(symmetrize(m))
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn svec<T: Real>(m: &DMatrix<T>) -> Result<SymVec<T>> {
    let m = symmetrize_checked(m)?;
    Ok(svec_unchecked(&m))
}

/// `svec` without the symmetry check; only the upper triangle is read.
pub fn svec_unchecked<T: Real>(m: &DMatrix<T>) -> SymVec<T> {
    let n = m.nrows();
    let root2 = T::lit(std::f64::consts::SQRT_2);
    let mut entries = DVector::zeros(sym_dim(n));
    let mut idx = 0;
    for i in 0..n {
        entries[idx] = m[(i, i)];
        idx += 1;
        for j in (i + 1)..n {
            entries[idx] = m[(i, j)] * root2;
            idx += 1;
        }
    }
    SymVec { entries, n }
}

pub fn smat<T: Real>(v: &SymVec<T>) -> DMatrix<T> {
    let n = v.n;
    let inv_root2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        m[(i, i)] = v.entries[idx];
        idx += 1;
        for j in (i + 1)..n {
            let val = v.entries[idx] * inv_root2;
            m[(i, j)] = val;
            m[(j, i)] = val;
            idx += 1;
        }
    }
    m
}

/// `smat` on a raw vector, failing with `BadLength` when no `n` fits.
pub fn smat_entries<T: Real>(v: &DVector<T>) -> Result<DMatrix<T>> {
    Ok(smat(&SymVec::from_entries(v.clone())?))
}

/// Largest eigenvalue modulus, including complex eigenvalues.
pub fn spectral_radius<T: Real>(a: &DMatrix<T>) -> T {
    assert!(a.is_square(), "spectral radius needs a square matrix");
    if a.nrows() == 0 {
        return T::zero();
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| (z.re * z.re + z.im * z.im).sqrt())
        .fold(T::zero(), |acc, r| if r > acc { r } else { acc })
}

pub fn min_eig_sym<T: Real>(s: &DMatrix<T>) -> Result<T> {
    let s = symmetrize_checked(s)?;
    Ok(sym_eigenvalues(&s).min())
}

pub fn max_eig_sym<T: Real>(s: &DMatrix<T>) -> Result<T> {
    let s = symmetrize_checked(s)?;
    Ok(sym_eigenvalues(&s).max())
}

fn sym_eigenvalues<T: Real>(s: &DMatrix<T>) -> DVector<T> {
    s.clone().symmetric_eigen().eigenvalues
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(a: &DMatrix<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    a.singular_values().max()
}

pub fn trace_inner<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.component_mul(b).sum()
}

/// Solution of a pseudo-inverse solve together with the rank that was kept.
#[derive(Debug, Clone)]
pub struct PinvSolution<T: Real> {
    pub x: DMatrix<T>,
    pub rank: usize,
}

/// Minimum-norm least-squares solution of `A X = B` for a matrix right-hand side.
///
/// Singular values below `rank_tol * sigma_max` are treated as zero.
pub fn pinv_solve_multi<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, rank_tol: T) -> Result<PinvSolution<T>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimMismatch(format!(
            "pinv solve: A has {} rows, rhs has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let (m, d) = a.shape();
    if m == 0 || d == 0 {
        return Ok(PinvSolution { x: DMatrix::zeros(d, b.ncols()), rank: 0 });
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = rank_tol * sigma_max;
    let mut rank = 0;
    let mut x = DMatrix::zeros(d, b.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == T::zero() {
            continue;
        }
        rank += 1;
        let coeffs = u.column(i).transpose() * b / s;
        x += v_t.row(i).transpose() * coeffs;
    }
    Ok(PinvSolution { x, rank })
}

/// Vector form of [`pinv_solve_multi`], returning `(x, effective_rank)`.
pub fn pinv_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>, rank_tol: T) -> Result<(DVector<T>, usize)> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let sol = pinv_solve_multi(a, &rhs, rank_tol)?;
    Ok((sol.x.column(0).into_owned(), sol.rank))
}

pub fn default_rank_tol<T: Real>() -> T {
    T::lit(T::RANK_TOL)
}

pub fn identity<T: Real>(n: usize) -> DMatrix<T> {
    DMatrix::identity(n, n)
}

pub fn diag<T: Real>(values: &[f64]) -> DMatrix<T> {
    DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|&v| T::lit(v))))
}
