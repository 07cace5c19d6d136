//! Maximum-likelihood recovery from ReLU-censored observations
//! `Z = ρ(X̌M + G)`, `G` i.i.d. `N(0, σ²)`.
//!
//! Over `Y ∈ Ψ(X̌)` the log-likelihood
//!
//! ```text
//! Σ_{Z>0} [−½ln(2π) − ln σ − (Z − Y)²/(2σ²)] + Σ_{Z=0} log Φ(−Y/σ)
//! ```
//!
//! is concave with curvature bounded by `1/σ²`, so projected gradient ascent
//! with step `σ²` is the natural solver.

use serde::Serialize;

use super::convex::pullback;
use super::normal::{log_std_cdf, log_std_pdf, HALF_LN_2PI};
use crate::error::{invalid, shape, Error, Result};
use crate::feasible::{PsiParams, PsiProjector, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::linalg::{svd, DenseMatrix, RANK_TOL};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// Censored data `Z ≥ 0` together with the noise level `σ`.
#[derive(Debug, Clone)]
pub struct CensoredObservation {
    z: DenseMatrix,
    sigma: f64,
}

impl CensoredObservation {
    pub fn new(z: DenseMatrix, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        if let Some(v) = z.as_slice().iter().find(|&&v| v < 0.0) {
            return Err(invalid(format!("censored observations must be nonnegative, found {v}")));
        }
        Ok(Self { z, sigma })
    }

    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Fraction of entries equal to zero.
    pub fn censored_fraction(&self) -> f64 {
        let zeros = self.z.as_slice().iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.z.as_slice().len() as f64
    }

    fn check(&self, m_prime: &DenseMatrix) -> Result<()> {
        if m_prime.shape() != self.z.shape() {
            return Err(shape(format!(
                "argument is {:?} but observations are {:?}",
                m_prime.shape(),
                self.z.shape()
            )));
        }
        Ok(())
    }
}

fn entry_loglik(z: f64, m: f64, sigma: f64) -> f64 {
    if z > 0.0 {
        let r = (z - m) / sigma;
        -HALF_LN_2PI - sigma.ln() - 0.5 * r * r
    } else {
        log_std_cdf(-m / sigma)
    }
}

fn entry_grad(z: f64, m: f64, sigma: f64) -> f64 {
    if z > 0.0 {
        (z - m) / (sigma * sigma)
    } else {
        let u = m / sigma;
        -(log_std_pdf(u) - sigma.ln() - log_std_cdf(-u)).exp()
    }
}

/// Log-likelihood of `Z` when the pre-activation mean is `M′`.
pub fn censored_loglik(m_prime: &DenseMatrix, obs: &CensoredObservation) -> Result<f64> {
    obs.check(m_prime)?;
    Ok(obs
        .z
        .as_slice()
        .iter()
        .zip(m_prime.as_slice())
        .map(|(&z, &m)| entry_loglik(z, m, obs.sigma))
        .sum())
}

pub fn censored_loglik_grad(m_prime: &DenseMatrix, obs: &CensoredObservation) -> Result<DenseMatrix> {
    obs.check(m_prime)?;
    Ok(obs.z.zip_map(m_prime, |z, m| entry_grad(z, m, obs.sigma)))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MleOptions {
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub projection_tol: f64,
    pub projection_max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
            projection_tol: DEFAULT_TOL,
            projection_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub m_hat: DenseMatrix,
    pub y_hat: DenseMatrix,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the starting point and after every accepted step.
    pub trace: Vec<f64>,
}

pub fn solve_mle(
    obs: &CensoredObservation,
    p: &PsiParams,
    tol: f64,
    max_iter: usize,
) -> Result<MleResult> {
    solve_mle_with(
        obs,
        p,
        &MleOptions {
            tol,
            max_iter,
            ..MleOptions::default()
        },
    )
}

pub fn solve_mle_with(obs: &CensoredObservation, p: &PsiParams, opts: &MleOptions) -> Result<MleResult> {
    if !(opts.tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let (d1, d) = p.x_check.shape();
    if obs.z.rows() != d1 {
        return Err(shape(format!("Z has {} rows but X̌ has {d1}", obs.z.rows())));
    }
    if d1 < d {
        return Err(invalid(format!("X̌ must have at least as many rows as columns, got {d1}×{d}")));
    }
    let s = svd(&p.x_check)?.s;
    let (largest, smallest) = (s[0], s[s.len() - 1]);
    if smallest <= RANK_TOL * largest {
        return Err(Error::RankDeficient { smallest, largest });
    }

    let mut projector = PsiProjector::new(
        p,
        obs.z.cols(),
        opts.projection_tol,
        opts.projection_max_iter,
    )?;
    let step = obs.sigma * obs.sigma;

    let (mut y, _) = projector.project(&obs.z)?;
    let mut f = censored_loglik(&y, obs)?;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let g = censored_loglik_grad(&y, obs)?;
        let mut t = step;
        let mut accepted = None;
        for attempt in 0..=MAX_HALVINGS {
            let mut trial = y.clone();
            trial.axpy(t, &g);
            let (cand, _) = projector.project(&trial)?;
            let fc = censored_loglik(&cand, obs)?;
            let ok = if attempt == 0 {
                fc >= f
            } else {
                let delta = &cand - &y;
                let slope: f64 = g.as_slice().iter().zip(delta.as_slice()).map(|(a, b)| a * b).sum();
                fc >= f + ARMIJO * slope.max(0.0)
            };
            if ok {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // no ascent direction survives projection: stationary up to
            // projection accuracy
            converged = true;
            break;
        };
        iterations += 1;
        let change = (fc - f).abs() / f.abs().max(1.0);
        y = cand;
        f = fc;
        trace.push(f);
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let m_hat = pullback(&p.x_check, &y)?;
    Ok(MleResult {
        m_hat,
        y_hat: y,
        loglik: f,
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recover::solve_constrained;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_obs(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> CensoredObservation {
        let y = gaussian(rows, cols, rng);
        CensoredObservation::new(y.relu(), sigma).unwrap()
    }

    #[test]
    fn scalar_examples() {
        let one = DenseMatrix::filled(1, 1, 1.0);
        let zero = DenseMatrix::zeros(1, 1);
        let obs = CensoredObservation::new(one.clone(), 1.0).unwrap();
        assert!((censored_loglik(&one, &obs).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert_eq!(censored_loglik_grad(&one, &obs).unwrap()[(0, 0)], 0.0);

        let obs = CensoredObservation::new(zero.clone(), 1.0).unwrap();
        assert!((censored_loglik(&zero, &obs).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let g = censored_loglik_grad(&zero, &obs).unwrap()[(0, 0)];
        assert!((g + 0.797_884_560_802_865_4).abs() < 1e-15);
    }

    #[test]
    fn mixed_instance_is_entrywise_sum() {
        let z = DenseMatrix::from_rows(&[&[0.0, 1.5], &[0.3, 0.0]]).unwrap();
        let m = DenseMatrix::from_rows(&[&[0.4, 1.0], &[-0.2, -2.0]]).unwrap();
        let sigma = 0.7;
        let obs = CensoredObservation::new(z, sigma).unwrap();
        let gauss = |z: f64, m: f64| {
            -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - (z - m) * (z - m) / (2.0 * sigma * sigma)
        };
        // log(1 − Φ(x/σ)) through Φ(−x/σ) = ½erfc(x/(σ√2))
        let cens = |m: f64| (0.5 * libm::erfc(m / (sigma * std::f64::consts::SQRT_2))).ln();
        let want = cens(0.4) + gauss(1.5, 1.0) + gauss(0.3, -0.2) + cens(-2.0);
        assert!((censored_loglik(&m, &obs).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..50 {
            let sigma = rng.random_range(0.3..2.0);
            let obs = random_obs(5, 4, sigma, &mut rng);
            let m = gaussian(5, 4, &mut rng);
            let g = censored_loglik_grad(&m, &obs).unwrap();
            for i in 0..5 {
                for j in 0..4 {
                    let mut plus = m.clone();
                    plus[(i, j)] += h;
                    let mut minus = m.clone();
                    minus[(i, j)] -= h;
                    let fd = (censored_loglik(&plus, &obs).unwrap()
                        - censored_loglik(&minus, &obs).unwrap())
                        / (2.0 * h);
                    let exact = g[(i, j)];
                    assert!(
                        (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                        "{fd} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn censored_gradient_is_finite_far_in_the_tail() {
        let obs = CensoredObservation::new(DenseMatrix::zeros(1, 3), 0.1).unwrap();
        let m = DenseMatrix::from_rows(&[&[5.0, 40.0, -40.0]]).unwrap();
        let g = censored_loglik_grad(&m, &obs).unwrap();
        assert!(g.as_slice().iter().all(|v| v.is_finite() && *v <= 0.0));
        // hazard ≈ u/σ for large u
        assert!((g[(0, 1)] / -(400.0 / 0.1) - 1.0).abs() < 1e-3);
        assert!(censored_loglik(&m, &obs).unwrap().is_finite());
    }

    #[test]
    fn loglik_is_concave() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let obs = random_obs(6, 5, rng.random_range(0.2..1.5), &mut rng);
            let a = gaussian(6, 5, &mut rng);
            let b = gaussian(6, 5, &mut rng);
            let lambda = rng.random_range(0.01..0.99);
            let mix = &a.scaled(lambda) + &b.scaled(1.0 - lambda);
            let lhs = censored_loglik(&mix, &obs).unwrap();
            let rhs = lambda * censored_loglik(&a, &obs).unwrap()
                + (1.0 - lambda) * censored_loglik(&b, &obs).unwrap();
            assert!(lhs >= rhs - 1e-8);
        }
    }

    #[test]
    fn rejects_bad_observations() {
        assert!(CensoredObservation::new(DenseMatrix::filled(2, 2, -0.1), 1.0).is_err());
        assert!(CensoredObservation::new(DenseMatrix::zeros(2, 2), 0.0).is_err());
        let obs = CensoredObservation::new(DenseMatrix::zeros(2, 2), 1.0).unwrap();
        assert!(matches!(censored_loglik(&DenseMatrix::zeros(2, 3), &obs), Err(Error::Shape(_))));
        let p = PsiParams::new(DenseMatrix::zeros(3, 2), 1.0, 1).unwrap();
        assert!(solve_mle(&obs, &p, 1e-8, 10).is_err());
    }

    #[test]
    fn uncensored_data_reduces_to_frobenius_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(12, 6, &mut rng);
        let z = gaussian(12, 8, &mut rng).map(|v| v.abs() + 0.05);
        let p = PsiParams::new(x, 0.8, 2).unwrap();
        let obs = CensoredObservation::new(z.clone(), 0.5).unwrap();
        let mle = solve_mle(&obs, &p, 1e-10, 200).unwrap();
        let lsq = solve_constrained(&z, &p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(mle.converged);
        assert!(mle.y_hat.distance(&lsq.y_hat) <= 1e-4);
    }

    #[test]
    fn all_censored_pushes_toward_negative_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PsiParams::new(gaussian(10, 4, &mut rng), 0.2, 1).unwrap();
        let obs = CensoredObservation::new(DenseMatrix::zeros(10, 6), 1.0).unwrap();
        let res = solve_mle(&obs, &p, 1e-10, 300).unwrap();
        assert!(res.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        assert!(res.trace.last().unwrap() > &res.trace[0]);
        let psum: f64 = res.y_hat.as_slice().iter().filter(|v| **v > 0.0).sum();
        let nsum: f64 = res.y_hat.as_slice().iter().filter(|v| **v < 0.0).sum();
        assert!(nsum < 0.0);
        // any positive mass left is what the span constraint forces
        assert!(psum < -nsum);
    }

    #[test]
    fn all_censored_with_square_design_lands_on_the_box_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let alpha = 0.2;
        let p = PsiParams::new(gaussian(8, 8, &mut rng), alpha, 1).unwrap();
        let obs = CensoredObservation::new(DenseMatrix::zeros(8, 5), 1.0).unwrap();
        let res = solve_mle(&obs, &p, 1e-12, 500).unwrap();
        assert!(res.y_hat.as_slice().iter().all(|&v| v <= 1e-9));
        // −α·11ᵀ is feasible and maximizes every censored term
        assert!(res.y_hat.distance(&DenseMatrix::filled(8, 5, -alpha)) < 1e-5);
    }

    #[test]
    fn mle_beats_naive_fit_on_censored_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d1, d, d2, sigma) = (24, 8, 16, 0.1);
        let x = gaussian(d1, d, &mut rng);
        let m0 = gaussian(d, 2, &mut rng).matmul(&gaussian(2, d2, &mut rng));
        let scale = 1.0 / x.matmul(&m0).max_abs();
        let m = m0.scaled(scale);
        let y = x.matmul(&m);
        let g = gaussian(d1, d2, &mut rng).scaled(sigma);
        let z = (&y + &g).relu();
        let p = PsiParams::new(x.clone(), 1.0, 2).unwrap();
        let obs = CensoredObservation::new(z.clone(), sigma).unwrap();
        let mle = solve_mle(&obs, &p, 1e-10, 2000).unwrap();
        let naive = solve_constrained(&z, &p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let mse_mle = y.mse(&x.matmul(&mle.m_hat));
        let mse_naive = y.mse(&x.matmul(&naive.m_hat));
        assert!(mse_mle < mse_naive, "{mse_mle} vs {mse_naive}");
        assert!(mle.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        assert!(crate::feasible::contains(&mle.y_hat, &p, 1e-5).unwrap());
    }

    #[test]
    fn gaussian_max_entry_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 64usize;
        let cells = (n * n) as f64;
        let threshold = 2.0 * cells.ln().sqrt();
        let trials = 200;
        let exceed = (0..trials)
            .filter(|_| gaussian(n, n, &mut rng).as_slice().iter().copied().fold(f64::MIN, f64::max) >= threshold)
            .count();
        let bound = 1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt() * cells * cells.ln().sqrt());
        assert!(exceed as f64 / trials as f64 <= 5.0 * bound);
    }
}
