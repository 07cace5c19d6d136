//! SVD-based kernels: truncation, pseudoinverse, Gram square roots and norms.

use super::DenseMatrix;
use crate::error::{invalid, Error, Result};

/// Relative threshold below which a singular value counts as zero for
/// full-rank checks.
pub const RANK_TOL: f64 = 1e-10;

/// Default relative cutoff for [`pinv`].
pub const DEFAULT_RCOND: f64 = 1e-12;

/// Compact SVD `A = U·diag(s)·Vᵀ` with `k = min(rows, cols)` triplets.
///
/// Singular values are nonincreasing. Column signs are normalized so the
/// largest-magnitude entry of each left singular vector is nonnegative (ties
/// go to the lowest index), which makes factorizations reproducible.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn k(&self) -> usize {
        self.s.len()
    }

    /// `U_r·diag(s_r)·V_rᵀ` using the leading `r` triplets.
    pub fn reconstruct_rank(&self, r: usize) -> DenseMatrix {
        let r = r.min(self.k());
        let (m, n) = (self.u.rows(), self.v.rows());
        if r == 0 {
            return DenseMatrix::zeros(m, n);
        }
        let us = DenseMatrix::from_fn(m, r, |i, j| self.u[(i, j)] * self.s[j]);
        let vr = self.v.leading_columns(r);
        us.matmul(&vr.transpose())
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_rank(self.k())
    }

    /// Number of singular values above `rel_tol · s₁`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let largest = self.s.first().copied().unwrap_or(0.0);
        if largest == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rel_tol * largest).count()
    }
}

pub fn svd(a: &DenseMatrix) -> Result<SvdFactors> {
    let decomp = a
        .as_faer()
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let mut u = DenseMatrix::from_faer(decomp.U());
    let mut v = DenseMatrix::from_faer(decomp.V());
    let s_diag = decomp.S().column_vector();
    let k = a.rows().min(a.cols());
    let mut s: Vec<f64> = (0..k).map(|i| s_diag[i].max(0.0)).collect();

    // faer documents nonincreasing order; clamp rounding-level inversions.
    for i in 1..k {
        if s[i] > s[i - 1] {
            s[i] = s[i - 1];
        }
    }

    for j in 0..k {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..u.rows() {
            let mag = u[(i, j)].abs();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        if u[(pivot, j)] < 0.0 {
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }

    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("SVD produced non-finite singular values".into()));
    }
    Ok(SvdFactors { u, s, v })
}

/// Best rank-`r` approximation (Eckart–Young).
pub fn truncate_rank(a: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    let kmax = a.rows().min(a.cols());
    if r == 0 || r > kmax {
        return Err(invalid(format!("rank {r} outside 1..={kmax}")));
    }
    Ok(svd(a)?.reconstruct_rank(r))
}

/// Moore–Penrose pseudoinverse. Singular values at or below `rcond · s₁`
/// are treated as zero.
pub fn pinv(a: &DenseMatrix, rcond: f64) -> Result<DenseMatrix> {
    if !(rcond >= 0.0) {
        return Err(invalid(format!("rcond must be nonnegative, got {rcond}")));
    }
    let f = svd(a)?;
    Ok(pinv_from_svd(&f, rcond))
}

fn pinv_from_svd(f: &SvdFactors, rcond: f64) -> DenseMatrix {
    let (m, n) = (f.u.rows(), f.v.rows());
    let cutoff = rcond * f.s.first().copied().unwrap_or(0.0);
    let kept = f.s.iter().take_while(|&&s| s > cutoff && s > 0.0).count();
    if kept == 0 {
        return DenseMatrix::zeros(n, m);
    }
    // V_k · diag(1/s) · U_kᵀ
    let vs = DenseMatrix::from_fn(n, kept, |i, j| f.v[(i, j)] / f.s[j]);
    vs.matmul(&f.u.leading_columns(kept).transpose())
}

/// Returns `(S, S⁻¹)` with `S` the symmetric positive-definite square root
/// of `xᵀx`. Fails with [`Error::RankDeficient`] unless `x` has full column
/// rank.
pub fn gram_sqrt_pair(x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let f = svd(x)?;
    let largest = f.s.first().copied().unwrap_or(0.0);
    let smallest = if x.rows() < x.cols() {
        0.0
    } else {
        f.s.last().copied().unwrap_or(0.0)
    };
    if largest == 0.0 || smallest <= RANK_TOL * largest {
        return Err(Error::RankDeficient { smallest, largest });
    }
    let d = x.cols();
    let vs = DenseMatrix::from_fn(d, d, |i, j| f.v[(i, j)] * f.s[j]);
    let vs_inv = DenseMatrix::from_fn(d, d, |i, j| f.v[(i, j)] / f.s[j]);
    let vt = f.v.transpose();
    let mut sqrt = vs.matmul(&vt);
    let mut inv_sqrt = vs_inv.matmul(&vt);
    symmetrize(&mut sqrt);
    symmetrize(&mut inv_sqrt);
    Ok((sqrt, inv_sqrt))
}

fn symmetrize(m: &mut DenseMatrix) {
    let n = m.rows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub operator: f64,
    pub nuclear: f64,
    /// Entrywise ℓ∞ norm.
    pub max_abs: f64,
}

pub fn norms(a: &DenseMatrix) -> Result<Norms> {
    let f = svd(a)?;
    Ok(Norms {
        frobenius: a.frobenius_norm(),
        operator: f.s.first().copied().unwrap_or(0.0),
        nuclear: f.s.iter().sum(),
        max_abs: a.max_abs(),
    })
}

pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(svd(a)?.s.iter().sum())
}

/// Approximate rank-`r` predicate: `‖Y‖_* ≤ ‖Y‖∞·√(r·rows·cols)`, with a
/// relative slack of 1e-9. The zero matrix satisfies it trivially.
pub fn is_approx_rank(y: &DenseMatrix, r: usize) -> Result<bool> {
    if r == 0 {
        return Err(invalid("approximate rank must be positive"));
    }
    if y.is_zero() {
        return Ok(true);
    }
    let bound = y.max_abs() * ((r * y.rows() * y.cols()) as f64).sqrt();
    Ok(nuclear_norm(y)? <= bound * (1.0 + 1e-9))
}
