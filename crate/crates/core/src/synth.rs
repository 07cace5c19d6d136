//! Seeded generators for planted recovery instances and MLPs.
//!
//! Every generator is a pure function of its parameters and a
//! [`SeededRng`]. The stream is ChaCha12 (`rand_chacha`), keyed by a 64-bit
//! seed with a 64-bit stream id selecting an independent substream, so
//! trial `k` of a sweep can be regenerated without replaying trials `0..k`.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::io::{load_matrix, save_matrix};
use crate::linalg::{is_approx_rank, pinv, svd, DenseMatrix, DEFAULT_RCOND, RANK_TOL};
use crate::mlp::{Activation, Layer, MlpModel};

const TAIL_RATIO: f64 = 0.1;
const MAX_RETRIES: usize = 10;

/// ChaCha12 keyed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// I.i.d. `N(0, σ²)` entries.
    pub fn gaussian(&mut self, rows: usize, cols: usize, sigma: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| sigma * self.sample::<f64, _>(StandardNormal))
    }

    /// I.i.d. uniform entries on `[−β, β]`.
    pub fn uniform(&mut self, rows: usize, cols: usize, beta: f64) -> DenseMatrix {
        if beta == 0.0 {
            return DenseMatrix::zeros(rows, cols);
        }
        DenseMatrix::from_fn(rows, cols, |_, _| self.random_range(-beta..=beta))
    }

    /// Uniformly distributed unit vector.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    BoundedUniform { beta: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseKind {
    fn validate(self) -> Result<()> {
        let level = match self {
            NoiseKind::BoundedUniform { beta } => beta,
            NoiseKind::Gaussian { sigma } => sigma,
        };
        if !(level >= 0.0) || !level.is_finite() {
            return Err(invalid(format!("noise level must be nonnegative, got {level}")));
        }
        Ok(())
    }

    fn sample(self, rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
        match self {
            NoiseKind::BoundedUniform { beta } => rng.uniform(rows, cols, beta),
            NoiseKind::Gaussian { sigma } => rng.gaussian(rows, cols, sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    /// `Ỹ = X̌M + G + E` with `rank(M) = r`.
    ExactRank,
    /// `Ỹ = Y₀ + G`, `Y₀` approximately rank-`r`.
    ApproxRank,
    /// `Z = ρ(Y₀ + G)`.
    ApproxRankRelu,
}

/// Parameters recorded alongside an instance (the JSON sidecar).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub d1: usize,
    pub d: usize,
    pub d2: usize,
    pub r: usize,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    pub kind: InstanceKind,
}

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub x_check: DenseMatrix,
    pub m: DenseMatrix,
    /// `X̌·M`
    pub y: DenseMatrix,
    pub g: DenseMatrix,
    pub e: Option<DenseMatrix>,
    pub observation: DenseMatrix,
    pub params: InstanceParams,
}

impl PlantedInstance {
    /// `‖y − X̌·m̂‖_F²/(d1·d2)`
    pub fn mse(&self, m_hat: &DenseMatrix) -> f64 {
        self.y.mse(&self.x_check.matmul(m_hat))
    }

    /// Writes `x_check.lrm`, `m.lrm`, `y.lrm`, `g.lrm`, optional `e.lrm`,
    /// `observation.lrm` and `params.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_matrix(dir.join("x_check.lrm"), &self.x_check)?;
        save_matrix(dir.join("m.lrm"), &self.m)?;
        save_matrix(dir.join("y.lrm"), &self.y)?;
        save_matrix(dir.join("g.lrm"), &self.g)?;
        if let Some(e) = &self.e {
            save_matrix(dir.join("e.lrm"), e)?;
        }
        save_matrix(dir.join("observation.lrm"), &self.observation)?;
        fs::write(dir.join("params.json"), serde_json::to_string_pretty(&self.params)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let params: InstanceParams = serde_json::from_str(&fs::read_to_string(dir.join("params.json"))?)?;
        let e_path = dir.join("e.lrm");
        let inst = Self {
            x_check: load_matrix(dir.join("x_check.lrm"))?,
            m: load_matrix(dir.join("m.lrm"))?,
            y: load_matrix(dir.join("y.lrm"))?,
            g: load_matrix(dir.join("g.lrm"))?,
            e: if e_path.exists() { Some(load_matrix(e_path)?) } else { None },
            observation: load_matrix(dir.join("observation.lrm"))?,
            params,
        };
        let (d1, d2) = inst.observation.shape();
        if inst.x_check.shape() != (params.d1, params.d) || (d1, d2) != (params.d1, params.d2) {
            return Err(Error::Format("stored matrices disagree with params.json".into()));
        }
        Ok(inst)
    }
}

fn check_dims(d1: usize, d: usize, d2: usize, r: usize) -> Result<()> {
    if r == 0 || d < r || d1 < d || d2 < r {
        return Err(invalid(format!(
            "need d1 ≥ d ≥ r ≥ 1 and d2 ≥ r, got d1={d1}, d={d}, d2={d2}, r={r}"
        )));
    }
    Ok(())
}

/// Standard Gaussian `d1×d` design, resampled in the (probability zero)
/// event that it is numerically rank deficient.
fn full_rank_design(d1: usize, d: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    for _ in 0..MAX_RETRIES {
        let x = rng.gaussian(d1, d, 1.0);
        let s = svd(&x)?.s;
        if s[s.len() - 1] > RANK_TOL * s[0] {
            return Ok(x);
        }
    }
    Err(Error::Generation("could not draw a full-rank design".into()))
}

/// Planted instance for the rank-constrained problem:
/// `X̌` standard Gaussian, `M = G_L·G_R/√r`, noise `N(0, σ²)` and a rank-one
/// perturbation `E` with `‖E‖_op² = ε·d1`.
pub fn gen_exact_rank_instance(
    d1: usize,
    d: usize,
    d2: usize,
    r: usize,
    sigma: f64,
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<PlantedInstance> {
    check_dims(d1, d, d2, r)?;
    if !(sigma >= 0.0) || !(epsilon >= 0.0) {
        return Err(invalid(format!(
            "sigma and epsilon must be nonnegative, got {sigma}, {epsilon}"
        )));
    }
    let x_check = full_rank_design(d1, d, rng)?;
    let m = rng
        .gaussian(d, r, 1.0)
        .matmul(&rng.gaussian(r, d2, 1.0))
        .scaled(1.0 / (r as f64).sqrt());
    let y = x_check.matmul(&m);
    let g = rng.gaussian(d1, d2, sigma);
    let mut observation = &y + &g;

    let e = if epsilon > 0.0 {
        let u = rng.unit_vector(d1);
        let v = rng.unit_vector(d2);
        let scale = (epsilon * d1 as f64).sqrt();
        let e = DenseMatrix::from_fn(d1, d2, |i, j| scale * u[i] * v[j]);
        let op = svd(&e)?.s[0];
        if (op * op - epsilon * d1 as f64).abs() > 1e-10 * (epsilon * d1 as f64).max(1.0) {
            return Err(Error::Generation(format!(
                "perturbation has ‖E‖_op² = {}, expected {}",
                op * op,
                epsilon * d1 as f64
            )));
        }
        observation.axpy(1.0, &e);
        Some(e)
    } else {
        None
    };

    if svd(&m)?.numerical_rank(RANK_TOL) != r {
        return Err(Error::Generation(format!("planted M is not rank {r}")));
    }

    Ok(PlantedInstance {
        x_check,
        m,
        y,
        g,
        e,
        observation,
        params: InstanceParams {
            d1,
            d,
            d2,
            r,
            alpha: None,
            sigma: Some(sigma),
            beta: None,
            epsilon: Some(epsilon),
            seed: rng.seed(),
            stream: rng.stream_id(),
            kind: InstanceKind::ExactRank,
        },
    })
}

/// Planted instance whose signal `Y₀ = X̌M` is approximately rank-`r`:
/// a generic rank-`r` part plus a singular-value tail decaying by a factor
/// 10 per index, inside `col(X̌)`, scaled so that `‖Y₀‖∞ = α`.
///
/// With `relu` the observation is `ρ(Y₀ + G)`, otherwise `Y₀ + G`.
#[allow(clippy::too_many_arguments)]
pub fn gen_approx_rank_instance(
    d1: usize,
    d: usize,
    d2: usize,
    r: usize,
    alpha: f64,
    noise: NoiseKind,
    relu: bool,
    rng: &mut SeededRng,
) -> Result<PlantedInstance> {
    check_dims(d1, d, d2, r)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    noise.validate()?;

    let x_check = full_rank_design(d1, d, rng)?;
    let basis = svd(&x_check)?.u;
    let k = d.min(d2);
    // random orthonormal frames for the core's singular vectors
    let frame = svd(&rng.gaussian(d, d2, 1.0))?;
    let head = svd(&rng.gaussian(d, r, 1.0).matmul(&rng.gaussian(r, d2, 1.0)))?.s;

    let mut tail_len = k - r;
    let mut y0 = None;
    for _ in 0..=MAX_RETRIES {
        let mut s = head[..r].to_vec();
        s.extend((1..=tail_len).map(|j| head[r - 1] * TAIL_RATIO.powi(j as i32)));
        let n = s.len();
        let core = DenseMatrix::from_fn(d, d2, |i, j| {
            (0..n).map(|l| frame.u[(i, l)] * s[l] * frame.v[(j, l)]).sum()
        });
        let y = basis.matmul(&core);
        let y = y.scaled(alpha / y.max_abs());
        if is_approx_rank(&y, r)? {
            y0 = Some(y);
            break;
        }
        if tail_len == 0 {
            break;
        }
        tail_len /= 2;
    }
    let y0 = y0.ok_or_else(|| {
        Error::Generation(format!("could not build an approximately rank-{r} signal"))
    })?;

    let m = pinv(&x_check, DEFAULT_RCOND)?.matmul(&y0);
    let drift = x_check.matmul(&m).distance(&y0);
    if drift > 1e-9 * y0.frobenius_norm() {
        return Err(Error::Generation(format!("X̌·M misses Y₀ by {drift:e}")));
    }

    let g = noise.sample(d1, d2, rng);
    let linear = &y0 + &g;
    let observation = if relu { linear.relu() } else { linear };
    let (sigma, beta) = match noise {
        NoiseKind::BoundedUniform { beta } => (None, Some(beta)),
        NoiseKind::Gaussian { sigma } => (Some(sigma), None),
    };
    Ok(PlantedInstance {
        x_check,
        m,
        y: y0,
        g,
        e: None,
        observation,
        params: InstanceParams {
            d1,
            d,
            d2,
            r,
            alpha: Some(alpha),
            sigma,
            beta,
            epsilon: None,
            seed: rng.seed(),
            stream: rng.stream_id(),
            kind: if relu {
                InstanceKind::ApproxRankRelu
            } else {
                InstanceKind::ApproxRank
            },
        },
    })
}

/// Planted ranks for [`gen_mlp`], plus the relative size of the full-rank
/// perturbation that turns `Φ̌` into `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub ranks: Vec<usize>,
    pub noise: f64,
}

/// Bias-free MLP with He-scaled Gaussian weights (variance `2/fan_in`),
/// ReLU on hidden layers and identity output.
///
/// With a plant, layer `i` is an exact rank-`rᵢ` product plus `noise` times
/// an independent He-scaled Gaussian. All low-rank factors are drawn before
/// any perturbation, so the same seed with `noise = 0` yields the
/// underlying `Φ̌` of the perturbed model.
pub fn gen_mlp(layer_dims: &[usize], rng: &mut SeededRng, plant: Option<&Plant>) -> Result<MlpModel> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(invalid(format!("need at least two positive dims, got {layer_dims:?}")));
    }
    let n_layers = layer_dims.len() - 1;
    let shapes: Vec<(usize, usize)> = layer_dims.windows(2).map(|w| (w[0], w[1])).collect();
    let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();

    let weights: Vec<DenseMatrix> = match plant {
        None => shapes.iter().map(|&(a, b)| rng.gaussian(a, b, he(a))).collect(),
        Some(plant) => {
            if plant.ranks.len() != n_layers {
                return Err(invalid(format!(
                    "{} ranks for {n_layers} layers",
                    plant.ranks.len()
                )));
            }
            if !(plant.noise >= 0.0) {
                return Err(invalid(format!("noise must be nonnegative, got {}", plant.noise)));
            }
            for (&r, &(a, b)) in plant.ranks.iter().zip(&shapes) {
                if r == 0 || r > a.min(b) {
                    return Err(invalid(format!("rank {r} outside 1..={} for a {a}×{b} layer", a.min(b))));
                }
            }
            let mut planted: Vec<DenseMatrix> = plant
                .ranks
                .iter()
                .zip(&shapes)
                .map(|(&r, &(a, b))| {
                    let left = rng.gaussian(a, r, 1.0);
                    let right = rng.gaussian(r, b, he(a) / (r as f64).sqrt());
                    left.matmul(&right)
                })
                .collect();
            if plant.noise > 0.0 {
                for (w, &(a, b)) in planted.iter_mut().zip(&shapes) {
                    w.axpy(plant.noise, &rng.gaussian(a, b, he(a)));
                }
            }
            planted
        }
    };

    let layers = weights
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 1 == n_layers {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Layer::dense(w, act)
        })
        .collect();
    MlpModel::new(layers)
}
