//! The image-space feasible set `Ψ(X̌)` and Euclidean projections onto it.
//!
//! `Ψ(X̌) = { Y : ‖Y‖_* ≤ α√(r·d1·d2), ‖Y‖∞ ≤ α, every column of Y in col(X̌) }`
//! is the image of the weight-space set `Ω` under `N ↦ X̌N`. Projection onto
//! the intersection uses Dykstra's algorithm, whose correction terms make the
//! limit the exact Euclidean projection rather than just some feasible point.

use serde::Serialize;

use crate::error::{invalid, shape, Result};
use crate::linalg::{svd, DenseMatrix, RANK_TOL};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 2000;

/// Parameters `(X̌, α, r)` of the feasible set.
#[derive(Debug, Clone)]
pub struct PsiParams {
    pub x_check: DenseMatrix,
    pub alpha: f64,
    pub r: usize,
}

impl PsiParams {
    pub fn new(x_check: DenseMatrix, alpha: f64, r: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if r == 0 {
            return Err(invalid("approximate rank r must be at least 1"));
        }
        Ok(Self { x_check, alpha, r })
    }

    /// Nuclear radius `α·√(r·rows·cols)` for a target of the given shape.
    pub fn nuclear_radius(&self, rows: usize, cols: usize) -> f64 {
        self.alpha * ((self.r * rows * cols) as f64).sqrt()
    }

    fn check_target(&self, y: &DenseMatrix) -> Result<()> {
        if y.rows() != self.x_check.rows() {
            return Err(shape(format!(
                "target has {} rows but X̌ has {}",
                y.rows(),
                self.x_check.rows()
            )));
        }
        let kmax = y.rows().min(y.cols());
        if self.r > kmax {
            return Err(invalid(format!("r = {} exceeds min(d1, d2) = {kmax}", self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionDiagnostics {
    /// Completed Dykstra sweeps.
    pub iterations: usize,
    /// Largest relative residual over the three constraints.
    pub final_violation: f64,
    pub converged: bool,
}

/// Entrywise clamp to `[−α, α]`.
pub fn project_linf(y: &DenseMatrix, alpha: f64) -> Result<DenseMatrix> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(clamp(y, alpha))
}

fn clamp(y: &DenseMatrix, alpha: f64) -> DenseMatrix {
    y.map(|v| v.clamp(-alpha, alpha))
}

/// Projection onto the nuclear-norm ball of radius `tau`: the singular values
/// are projected onto the ℓ1 ball, singular vectors are kept.
pub fn project_nuclear(y: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau > 0.0) {
        return Err(invalid(format!("nuclear radius must be positive, got {tau}")));
    }
    nuclear_step(y, tau)
}

fn nuclear_step(y: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    let mut f = svd(y)?;
    if f.s.iter().sum::<f64>() <= tau {
        return Ok(y.clone());
    }
    let theta = l1_ball_threshold(&f.s, tau);
    for s in &mut f.s {
        *s = (*s - theta).max(0.0);
    }
    let kept = f.s.iter().take_while(|&&s| s > 0.0).count();
    Ok(f.reconstruct_rank(kept))
}

/// Soft threshold `θ` such that `Σ max(s_i − θ, 0) = tau` for nonnegative,
/// nonincreasing `s` with `Σ s_i > tau`.
fn l1_ball_threshold(s: &[f64], tau: f64) -> f64 {
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &sj) in s.iter().enumerate() {
        cumsum += sj;
        let candidate = (cumsum - tau) / (j + 1) as f64;
        if sj - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Orthogonal projector onto the column span of `X̌`, stored as an
/// orthonormal basis. Full-row-rank `X̌` yields the identity.
#[derive(Debug, Clone)]
pub struct SpanProjector {
    basis: Option<DenseMatrix>,
}

impl SpanProjector {
    pub fn new(x_check: &DenseMatrix) -> Result<Self> {
        let f = svd(x_check)?;
        let rank = f.numerical_rank(RANK_TOL);
        if rank == x_check.rows() {
            return Ok(Self { basis: None });
        }
        let basis = if rank == 0 {
            // X̌ = 0 spans only the origin; a single zero column projects everything to 0.
            DenseMatrix::zeros(x_check.rows(), 1)
        } else {
            f.u.leading_columns(rank)
        };
        Ok(Self { basis: Some(basis) })
    }

    pub fn is_identity(&self) -> bool {
        self.basis.is_none()
    }

    pub fn apply(&self, y: &DenseMatrix) -> DenseMatrix {
        match &self.basis {
            None => y.clone(),
            Some(u) => u.matmul(&u.t_matmul(y)),
        }
    }

    /// `‖(I − P)·y‖_F`
    pub fn residual(&self, y: &DenseMatrix) -> f64 {
        match &self.basis {
            None => 0.0,
            Some(_) => y.distance(&self.apply(y)),
        }
    }
}

/// `P·y` with `P = X̌X̌†`.
pub fn project_span(y: &DenseMatrix, x_check: &DenseMatrix) -> Result<DenseMatrix> {
    if y.rows() != x_check.rows() {
        return Err(shape(format!(
            "target has {} rows but X̌ has {}",
            y.rows(),
            x_check.rows()
        )));
    }
    Ok(SpanProjector::new(x_check)?.apply(y))
}

/// Dykstra projector onto `Ψ(X̌)` for targets of one fixed shape.
///
/// The correction terms persist between calls to [`PsiProjector::project`],
/// so projecting a sequence of nearby points (as in projected gradient
/// methods) restarts from the previous dual state. Any starting corrections
/// give the same limit; only the iteration count changes.
#[derive(Debug, Clone)]
pub struct PsiProjector {
    span: SpanProjector,
    alpha: f64,
    tau: f64,
    tol: f64,
    max_iter: usize,
    shape: (usize, usize),
    corrections: Option<[DenseMatrix; 3]>,
}

impl PsiProjector {
    pub fn new(p: &PsiParams, cols: usize, tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(invalid(format!("tolerance must be positive, got {tol}")));
        }
        if max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        let rows = p.x_check.rows();
        p.check_target(&DenseMatrix::zeros(rows, cols))?;
        Ok(Self {
            span: SpanProjector::new(&p.x_check)?,
            alpha: p.alpha,
            tau: p.nuclear_radius(rows, cols),
            tol,
            max_iter,
            shape: (rows, cols),
            corrections: None,
        })
    }

    pub fn span(&self) -> &SpanProjector {
        &self.span
    }

    pub fn nuclear_radius(&self) -> f64 {
        self.tau
    }

    /// Drops the stored correction terms.
    pub fn reset(&mut self) {
        self.corrections = None;
    }

    pub fn project(&mut self, y: &DenseMatrix) -> Result<(DenseMatrix, ProjectionDiagnostics)> {
        if y.shape() != self.shape {
            return Err(shape(format!(
                "projector built for {:?}, got {:?}",
                self.shape,
                y.shape()
            )));
        }
        let (rows, cols) = self.shape;
        let mut corr = self.corrections.take().unwrap_or_else(|| {
            [
                DenseMatrix::zeros(rows, cols),
                DenseMatrix::zeros(rows, cols),
                DenseMatrix::zeros(rows, cols),
            ]
        });

        // x = y − Σ p_i is the primal point matching the stored dual state.
        let mut x = y.clone();
        for p in &corr {
            x.axpy(-1.0, p);
        }

        let mut best = None;
        let mut diag = ProjectionDiagnostics {
            iterations: 0,
            final_violation: f64::INFINITY,
            converged: false,
        };
        for iter in 1..=self.max_iter {
            let prev = x.clone();
            for (set, p) in corr.iter_mut().enumerate() {
                let z = &x + p;
                x = match set {
                    0 => self.span.apply(&z),
                    1 => nuclear_step(&z, self.tau)?,
                    _ => clamp(&z, self.alpha),
                };
                *p = &z - &x;
            }
            diag.iterations = iter;
            let scale = x.frobenius_norm().max(1.0);
            let change = x.distance(&prev) / scale;
            if change <= self.tol || iter == self.max_iter {
                let violation = self.violation(&x)?;
                if violation < diag.final_violation {
                    diag.final_violation = violation;
                    best = Some(x.clone());
                }
                if change <= self.tol && violation <= self.tol {
                    diag.converged = true;
                    break;
                }
            }
        }
        self.corrections = Some(corr);
        let out = if diag.converged { x } else { best.unwrap_or(x) };
        Ok((out, diag))
    }

    /// Largest relative constraint residual of `y`.
    pub fn violation(&self, y: &DenseMatrix) -> Result<f64> {
        let linf = (y.max_abs() / self.alpha - 1.0).max(0.0);
        let nuclear = (svd(y)?.s.iter().sum::<f64>() / self.tau - 1.0).max(0.0);
        let norm = y.frobenius_norm();
        let span = if norm > 0.0 {
            self.span.residual(y) / norm
        } else {
            0.0
        };
        Ok(linf.max(nuclear).max(span))
    }
}

/// Euclidean projection of `y` onto `Ψ(X̌)` (Dykstra, sweep order
/// span → nuclear → ℓ∞). Non-convergence is reported through the diagnostics
/// and the best iterate seen is returned.
pub fn project_psi(
    y: &DenseMatrix,
    p: &PsiParams,
    tol: f64,
    max_iter: usize,
) -> Result<(DenseMatrix, ProjectionDiagnostics)> {
    p.check_target(y)?;
    PsiProjector::new(p, y.cols(), tol, max_iter)?.project(y)
}

/// Membership in `Ψ(X̌)` with relative slack `tol` on every constraint.
pub fn contains(y: &DenseMatrix, p: &PsiParams, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(invalid(format!("tolerance must be nonnegative, got {tol}")));
    }
    p.check_target(y)?;
    if y.is_zero() {
        return Ok(true);
    }
    if y.max_abs() > p.alpha * (1.0 + tol) {
        return Ok(false);
    }
    let tau = p.nuclear_radius(y.rows(), y.cols());
    if svd(y)?.s.iter().sum::<f64>() > tau * (1.0 + tol) {
        return Ok(false);
    }
    let span = SpanProjector::new(&p.x_check)?;
    Ok(span.residual(y) <= tol.max(1e-12) * y.frobenius_norm())
}
