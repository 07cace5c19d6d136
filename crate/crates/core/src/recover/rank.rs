//! Closed-form rank-constrained reconstruction.
//!
//! For full-column-rank `X̌`, the minimizer of `‖Ỹ − X̌Z‖_F` over
//! `rank(Z) ≤ r` is
//!
//! ```text
//! M̂ = (X̌ᵀX̌)^{-1/2} · [ (X̌ᵀX̌)^{1/2} · X̌† · Ỹ ]_r
//! ```
//!
//! where `[·]_r` is the best rank-`r` approximation. The part of `Ỹ` outside
//! the column span of `X̌` is a constant offset of the objective.

use crate::error::{invalid, shape, Result};
use crate::linalg::{gram_sqrt_pair, pinv, svd, truncate_rank, DenseMatrix, DEFAULT_RCOND};

#[derive(Debug, Clone)]
pub struct RankRecoveryResult {
    pub m_hat: DenseMatrix,
    /// `‖Ỹ − X̌M̂‖_F`
    pub objective: f64,
    /// Numerical rank of `M̂` at threshold `1e-10·s₁`.
    pub residual_rank: usize,
}

pub fn solve_rank_constrained(
    x_check: &DenseMatrix,
    y_tilde: &DenseMatrix,
    r: usize,
) -> Result<RankRecoveryResult> {
    let (d1, d) = x_check.shape();
    if y_tilde.rows() != d1 {
        return Err(shape(format!(
            "Ỹ has {} rows but X̌ has {d1}",
            y_tilde.rows()
        )));
    }
    let d2 = y_tilde.cols();
    if r == 0 || r > d.min(d2) {
        return Err(invalid(format!("rank {r} outside 1..={}", d.min(d2))));
    }
    let (gram_sqrt, gram_inv_sqrt) = gram_sqrt_pair(x_check)?;
    let x_pinv = pinv(x_check, DEFAULT_RCOND)?;
    let whitened = gram_sqrt.matmul(&x_pinv.matmul(y_tilde));
    let truncated = truncate_rank(&whitened, r)?;
    let m_hat = gram_inv_sqrt.matmul(&truncated);

    let objective = y_tilde.distance(&x_check.matmul(&m_hat));
    let residual_rank = svd(&m_hat)?.numerical_rank(1e-10);
    Ok(RankRecoveryResult {
        m_hat,
        objective,
        residual_rank,
    })
}
