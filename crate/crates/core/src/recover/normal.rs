//! Numerically stable Gaussian CDF kernels in log space.
//!
//! `erfc` comes from `libm`; the far left tail switches to the continued
//! fraction for the Mills ratio so `log Φ` stays finite for any finite input.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

use crate::error::{invalid, Result};

/// `½·ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this standardized argument the Mills-ratio branch is used.
const LEFT_TAIL: f64 = -8.0;
const MILLS_DEPTH: usize = 120;

/// `log φ(u)` for the standard normal density.
#[inline]
pub fn log_std_pdf(u: f64) -> f64 {
    -0.5 * u * u - HALF_LN_2PI
}

#[inline]
pub fn std_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// `Φ(u)`
#[inline]
pub fn std_cdf(u: f64) -> f64 {
    0.5 * erfc(-u * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 − Φ(y)) / φ(y)` for `y > 0`, by backward evaluation of
/// `1/(y + 1/(y + 2/(y + 3/(y + …))))`.
fn mills_ratio(y: f64) -> f64 {
    let mut tail = y;
    for k in (1..=MILLS_DEPTH).rev() {
        tail = y + k as f64 / tail;
    }
    1.0 / tail
}

/// `log Φ(u)` for the standard normal.
pub fn log_std_cdf(u: f64) -> f64 {
    if u >= 5.0 {
        // Φ(u) = 1 − tail, tail < 3e-7
        (-0.5 * erfc(u * FRAC_1_SQRT_2)).ln_1p()
    } else if u >= LEFT_TAIL {
        std_cdf(u).ln()
    } else {
        log_std_pdf(u) + mills_ratio(-u).ln()
    }
}

/// `log Φ(t/σ)`, i.e. the log-CDF of `N(0, σ²)` at `t`.
pub fn log_norm_cdf(t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(log_std_cdf(t / sigma))
}

/// Inverse Mills ratio `φ(u)/Φ(u)`, evaluated as `exp(log φ − log Φ)`.
#[inline]
pub fn std_hazard(u: f64) -> f64 {
    (log_std_pdf(u) - log_std_cdf(u)).exp()
}

/// Second derivative of `log Φ(u)`: `−λ(u)·(u + λ(u))` with `λ = φ/Φ`.
pub fn log_std_cdf_second_derivative(u: f64) -> f64 {
    let lambda = std_hazard(u);
    let shifted = if u < LEFT_TAIL {
        // u + λ(u) = u + 1/R(−u) loses digits to cancellation; use the
        // continued fraction's own tail: 1/R(y) − y = 1/t₁ where t₁ is the
        // remainder after the first partial denominator.
        let y = -u;
        let mut tail = y;
        for k in (2..=MILLS_DEPTH).rev() {
            tail = y + k as f64 / tail;
        }
        1.0 / tail
    } else {
        u + lambda
    };
    -lambda * shifted
}
