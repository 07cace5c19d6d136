//! Constrained Frobenius recovery over `Ω`.
//!
//! Minimizing `‖t − X̌Z‖_F` over `Z ∈ Ω` is the Euclidean projection of `t`
//! onto `Ψ(X̌) = X̌·Ω`. The weight-space estimate is pulled back with the
//! pseudoinverse, which picks the minimum-norm preimage whenever the map
//! `Ω → Ψ(X̌)` is many-to-one.

use crate::error::Result;
use crate::feasible::{PsiParams, PsiProjector, ProjectionDiagnostics};
use crate::linalg::{pinv, DenseMatrix, DEFAULT_RCOND};

#[derive(Debug, Clone)]
pub struct ConvexRecoveryResult {
    pub m_hat: DenseMatrix,
    /// `X̌·M̂`, the projection of the target onto `Ψ(X̌)`.
    pub y_hat: DenseMatrix,
    pub diagnostics: ProjectionDiagnostics,
}

impl ConvexRecoveryResult {
    /// `‖t − ŷ‖_F`
    pub fn objective(&self, t: &DenseMatrix) -> f64 {
        t.distance(&self.y_hat)
    }
}

pub fn solve_constrained(
    t: &DenseMatrix,
    p: &PsiParams,
    tol: f64,
    max_iter: usize,
) -> Result<ConvexRecoveryResult> {
    let mut projector = PsiProjector::new(p, t.cols(), tol, max_iter)?;
    solve_with_projector(t, p, &mut projector)
}

pub(crate) fn solve_with_projector(
    t: &DenseMatrix,
    p: &PsiParams,
    projector: &mut PsiProjector,
) -> Result<ConvexRecoveryResult> {
    let (y_hat, diagnostics) = projector.project(t)?;
    let m_hat = pullback(&p.x_check, &y_hat)?;
    Ok(ConvexRecoveryResult {
        m_hat,
        y_hat,
        diagnostics,
    })
}

/// Minimum-norm `M` with `X̌M` closest to `y`.
pub(crate) fn pullback(x_check: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(pinv(x_check, DEFAULT_RCOND)?.matmul(y))
}
