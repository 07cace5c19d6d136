//! Numerical verification of the scalar inequalities behind the censored
//! likelihood analysis and the choice of step size in [`super::relu`].
//!
//! With `f` the CDF of `N(0, σ²)`:
//!
//! * curvature: `0 ≥ (log f)″ ≥ −1/σ²`,
//! * the Taylor lower bound it implies,
//! * `L_{α,σ} = sup_{|x|≤α} |f′|/(f(1−f)) ≤ 8(α+σ)/σ²`,
//! * `β_{α,σ} = sup_{|x|≤α} f(1−f)/f′² ≤ πσ²·exp(α²/2σ²)`,
//! * `d_H²(p, q) ≤ D_KL(p‖q)` for binary distributions,
//! * `d_H²(f(x), f(y)) ≥ (x − y)²/(8β_{α,σ})` on `[−α, α]`,
//! * `−σ²·log(1 − f(x)) / (x²/2) → 1` from above as `x → ∞`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::normal::{log_std_cdf, log_std_cdf_second_derivative, log_std_pdf, std_cdf, std_hazard, std_pdf};
use crate::error::{invalid, Result};

/// Worst-case margins must stay above this.
pub const MARGIN_TOL: f64 = -1e-7;

const RANDOM_PAIRS: usize = 10_000;
const TAYLOR_PARTNERS: usize = 64;
const PAIR_SEED: u64 = 0x5eed_1e44a;

#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub statement: &'static str,
    /// Smallest `(right side − left side)` found; nonnegative when the
    /// inequality holds everywhere it was evaluated.
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub alpha: f64,
    pub sigma: f64,
    pub grid_n: usize,
    pub lipschitz_sup: f64,
    pub lipschitz_bound: f64,
    pub beta_sup: f64,
    pub beta_bound: f64,
    pub tightness_ratio_at_10_sigma: f64,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &'static str, statement: &'static str, worst_margin: f64) -> LemmaCheck {
    LemmaCheck {
        name,
        statement,
        worst_margin,
        passed: worst_margin >= MARGIN_TOL,
    }
}

/// `(log f)″(x) = (log Φ)″(x/σ)/σ²`
fn log_cdf_curvature(x: f64, sigma: f64) -> f64 {
    log_std_cdf_second_derivative(x / sigma) / (sigma * sigma)
}

fn hellinger_sq(p: f64, q: f64) -> f64 {
    (p.sqrt() - q.sqrt()).powi(2) + ((1.0 - p).sqrt() - (1.0 - q).sqrt()).powi(2)
}

fn kl_divergence(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

fn ratio_f_prime_over_f_one_minus_f(x: f64, sigma: f64) -> f64 {
    let u = x / sigma;
    // f′/(f(1−f)) = φ/(σΦ(u)Φ(−u))
    (log_std_pdf(u) - log_std_cdf(u) - log_std_cdf(-u)).exp() / sigma
}

/// `−σ²·log(1 − f(x)) / (x²/2)`
pub fn tightness_ratio(x: f64, sigma: f64) -> f64 {
    -sigma * sigma * log_std_cdf(-x / sigma) / (0.5 * x * x)
}

/// Evaluates every inequality on a uniform grid of `grid_n` points over
/// `[−α, α]` (and `[σ, 20σ]` for the tightness ratio) plus seeded random
/// pairs, returning worst-case margins.
pub fn verify_scalar_lemmas(alpha: f64, sigma: f64, grid_n: usize) -> Result<LemmaReport> {
    if !(alpha > 0.0) || !(sigma > 0.0) {
        return Err(invalid(format!(
            "alpha and sigma must be positive, got {alpha}, {sigma}"
        )));
    }
    if grid_n < 1000 {
        return Err(invalid(format!("grid needs at least 1000 points, got {grid_n}")));
    }
    let grid: Vec<f64> = (0..grid_n)
        .map(|i| -alpha + 2.0 * alpha * i as f64 / (grid_n - 1) as f64)
        .collect();
    let inv_var = 1.0 / (sigma * sigma);
    let mut checks = Vec::new();

    let mut upper = f64::INFINITY;
    let mut lower = f64::INFINITY;
    for &x in &grid {
        let c = log_cdf_curvature(x, sigma);
        upper = upper.min(-c);
        lower = lower.min(c + inv_var);
    }
    checks.push(check(
        "log_concavity",
        "(log f)'' <= 0",
        upper * sigma * sigma,
    ));
    checks.push(check(
        "curvature_lower_bound",
        "(log f)'' >= -1/sigma^2",
        lower * sigma * sigma,
    ));

    // Taylor: log f(b) − log f(a) ≥ (f′(a)/f(a))(b − a) − (b − a)²/(2σ²)
    let step = grid.len().div_ceil(TAYLOR_PARTNERS).max(1);
    let partners: Vec<f64> = grid.iter().step_by(step).copied().chain([alpha]).collect();
    let mut taylor = f64::INFINITY;
    for &a in &grid {
        let log_fa = log_std_cdf(a / sigma);
        let slope = std_hazard(a / sigma) / sigma;
        for &b in &partners {
            let lhs = log_std_cdf(b / sigma) - log_fa;
            let rhs = slope * (b - a) - 0.5 * inv_var * (b - a).powi(2);
            taylor = taylor.min(lhs - rhs);
        }
    }
    checks.push(check(
        "taylor_lower_bound",
        "log f(b) - log f(a) >= f'(a)/f(a)(b-a) - (b-a)^2/(2 sigma^2)",
        taylor,
    ));

    let lipschitz_sup = grid
        .iter()
        .map(|&x| ratio_f_prime_over_f_one_minus_f(x, sigma))
        .fold(0.0, f64::max);
    let lipschitz_bound = 8.0 * (alpha + sigma) / (sigma * sigma);
    checks.push(check(
        "lipschitz_constant",
        "sup |f'|/(f(1-f)) <= 8(alpha+sigma)/sigma^2",
        (lipschitz_bound - lipschitz_sup) / lipschitz_bound,
    ));

    let beta_sup = grid
        .iter()
        // f(1−f)/f′² = 1/(ratio·f′), f′ = φ(x/σ)/σ
        .map(|&x| sigma / (ratio_f_prime_over_f_one_minus_f(x, sigma) * std_pdf(x / sigma)))
        .fold(0.0, f64::max);
    let beta_bound = std::f64::consts::PI * sigma * sigma * (alpha * alpha / (2.0 * sigma * sigma)).exp();
    checks.push(check(
        "beta_constant",
        "sup f(1-f)/f'^2 <= pi sigma^2 exp(alpha^2/(2 sigma^2))",
        (beta_bound - beta_sup) / beta_bound,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(PAIR_SEED);
    let mut hellinger_kl = f64::INFINITY;
    let mut hellinger_frob = f64::INFINITY;
    for _ in 0..RANDOM_PAIRS {
        let p: f64 = rng.random_range(f64::EPSILON..1.0);
        let q: f64 = rng.random_range(f64::EPSILON..1.0);
        hellinger_kl = hellinger_kl.min(kl_divergence(p, q) - hellinger_sq(p, q));

        let x = rng.random_range(-alpha..=alpha);
        let y = rng.random_range(-alpha..=alpha);
        let dh = hellinger_sq(std_cdf(x / sigma), std_cdf(y / sigma));
        hellinger_frob = hellinger_frob.min(dh - (x - y).powi(2) / (8.0 * beta_sup));
    }
    checks.push(check("hellinger_below_kl", "d_H^2(p,q) <= D_KL(p||q)", hellinger_kl));
    checks.push(check(
        "hellinger_above_frobenius",
        "d_H^2(f(x),f(y)) >= (x-y)^2/(8 beta)",
        hellinger_frob,
    ));

    let tail_grid = (0..grid_n).map(|i| sigma + 19.0 * sigma * i as f64 / (grid_n - 1) as f64);
    let tightness_min = tail_grid.map(|x| tightness_ratio(x, sigma) - 1.0).fold(f64::INFINITY, f64::min);
    checks.push(check(
        "relaxation_upper_bound",
        "-sigma^2 log(1-f(x)) >= x^2/2 on [sigma, 20 sigma]",
        tightness_min,
    ));
    let tightness_ratio_at_10_sigma = tightness_ratio(10.0 * sigma, sigma);
    checks.push(check(
        "relaxation_tightness",
        "ratio at x = 10 sigma lies in [1.0, 1.1]",
        (tightness_ratio_at_10_sigma - 1.0).min(1.1 - tightness_ratio_at_10_sigma),
    ));

    Ok(LemmaReport {
        alpha,
        sigma,
        grid_n,
        lipschitz_sup,
        lipschitz_bound,
        beta_sup,
        beta_bound,
        tightness_ratio_at_10_sigma,
        checks,
    })
}
