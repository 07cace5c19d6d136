//! Layer-wise data-driven low-rank compression of an MLP.
//!
//! For layer `i` with original input activations `X` and the compressed
//! prefix's activations `X̌`, the replacement weight is chosen to make
//! `X̌·M̂` reproduce the original pre-activation `X·W`, then stored as a
//! rank-`r` factor pair `A·B`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::feasible::{PsiParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::linalg::{svd, truncate_rank, DenseMatrix, RANK_TOL};
use crate::mlp::{Activation, Layer, MlpModel};
use crate::recover::{solve_constrained, solve_mle, solve_rank_constrained, CensoredObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMethod {
    ClosedForm,
    Convex,
    ReluMle,
}

impl FromStr for CompressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form" => Ok(Self::ClosedForm),
            "convex" => Ok(Self::Convex),
            "relu_mle" => Ok(Self::ReluMle),
            other => Err(invalid(format!(
                "unknown method {other:?}, expected closed_form, convex or relu_mle"
            ))),
        }
    }
}

impl fmt::Display for CompressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClosedForm => "closed_form",
            Self::Convex => "convex",
            Self::ReluMle => "relu_mle",
        })
    }
}

/// Which activations feed the `X̌` side of each layer's problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationPolicy {
    /// Activations of the already-compressed prefix.
    #[default]
    Sequential,
    /// Activations of the original model on both sides.
    Original,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompressParams {
    /// `ℓ∞` radius for the convex and MLE solvers; defaults to the largest
    /// absolute target entry.
    pub alpha: Option<f64>,
    /// Noise level assumed by `relu_mle`.
    pub sigma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub policy: CalibrationPolicy,
}

impl Default for CompressParams {
    fn default() -> Self {
        Self {
            alpha: None,
            sigma: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            policy: CalibrationPolicy::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub method: CompressionMethod,
    pub rank: usize,
    pub params_before: usize,
    pub params_after: usize,
    /// `‖X·W − X̌·A·B‖_F²/(m·N_i)`
    pub activation_mse: f64,
    /// `‖M̂ − A·B‖_F`, the cost of storing the solver output at exact rank.
    pub truncation_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub layers: Vec<LayerReport>,
    pub params_before: usize,
    pub params_after: usize,
    /// `params_after / params_before`
    pub compression_ratio: f64,
    /// Mean squared difference of the two models' outputs on the calibration data.
    pub output_mse: f64,
}

/// Balanced rank-`r` factors of `m`: `A = U_r·√Σ_r`, `B = √Σ_r·V_rᵀ`.
pub fn balanced_factors(m: &DenseMatrix, r: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let f = svd(m)?;
    if r == 0 || r > f.k() {
        return Err(invalid(format!("rank {r} outside 1..={}", f.k())));
    }
    let root: Vec<f64> = f.s[..r].iter().map(|s| s.sqrt()).collect();
    let a = DenseMatrix::from_fn(m.rows(), r, |i, l| f.u[(i, l)] * root[l]);
    let b = DenseMatrix::from_fn(r, m.cols(), |l, j| root[l] * f.v[(j, l)]);
    Ok((a, b))
}

/// For a column-rank-deficient `x` returns `(x·V_k, V_k)` where `V_k` spans
/// its row space, otherwise `None`.
fn reduce_design(x: &DenseMatrix) -> Result<Option<(DenseMatrix, DenseMatrix)>> {
    let f = svd(x)?;
    let s1 = f.s.first().copied().unwrap_or(0.0);
    let k = f.s.iter().filter(|&&s| s > RANK_TOL * s1).count();
    if k == x.cols() {
        return Ok(None);
    }
    if k == 0 {
        return Err(Error::RankDeficient { smallest: 0.0, largest: s1 });
    }
    let v = DenseMatrix::from_fn(x.cols(), k, |j, l| f.v[(j, l)]);
    Ok(Some((x.matmul(&v), v)))
}

/// Compresses one weight matrix `w` (inputs already lifted for bias).
pub fn compress_layer(
    x_orig: &DenseMatrix,
    x_comp: &DenseMatrix,
    w: &DenseMatrix,
    r: usize,
    method: CompressionMethod,
    params: &CompressParams,
) -> Result<(DenseMatrix, DenseMatrix, LayerReport)> {
    if x_orig.shape() != x_comp.shape() {
        return Err(shape(format!(
            "original activations are {:?} but compressed ones are {:?}",
            x_orig.shape(),
            x_comp.shape()
        )));
    }
    if x_orig.cols() != w.rows() {
        return Err(shape(format!(
            "activations have {} columns but the weight has {} rows",
            x_orig.cols(),
            w.rows()
        )));
    }
    let (n_in, n_out) = w.shape();
    if r == 0 || r > n_in.min(n_out) {
        return Err(invalid(format!("rank {r} outside 1..={}", n_in.min(n_out))));
    }
    let target = x_orig.matmul(w);
    let alpha = match params.alpha.unwrap_or_else(|| target.max_abs()) {
        a if a > 0.0 => a,
        _ => 1.0,
    };

    // Dead ReLU units leave X̌ column-rank deficient; solve in its row space.
    let reduced = reduce_design(x_comp)?;
    let (x_solve, r_solve) = match &reduced {
        Some((x_red, _)) => (x_red, r.min(x_red.cols())),
        None => (x_comp, r),
    };

    let (m_solve, converged) = match method {
        CompressionMethod::ClosedForm => (solve_rank_constrained(x_solve, &target, r_solve)?.m_hat, true),
        CompressionMethod::Convex => {
            let p = PsiParams::new(x_solve.clone(), alpha, r_solve)?;
            let res = solve_constrained(&target, &p, params.tol, params.max_iter)?;
            (res.m_hat, res.diagnostics.converged)
        }
        CompressionMethod::ReluMle => {
            let sigma = params
                .sigma
                .ok_or_else(|| invalid("relu_mle needs a noise level sigma"))?;
            let obs = CensoredObservation::new(target.relu(), sigma)?;
            let p = PsiParams::new(x_solve.clone(), alpha, r_solve)?;
            let res = solve_mle(&obs, &p, params.tol, params.max_iter)?;
            (res.m_hat, res.converged)
        }
    };

    let m_hat = match &reduced {
        Some((_, v)) => v.matmul(&m_solve),
        None => m_solve,
    };

    let (a, b) = balanced_factors(&m_hat, r)?;
    let product = a.matmul(&b);
    let report = LayerReport {
        layer: 0,
        method,
        rank: r,
        params_before: n_in * n_out,
        params_after: r * (n_in + n_out),
        activation_mse: target.mse(&x_comp.matmul(&product)),
        truncation_residual: m_hat.distance(&product),
        converged,
    };
    Ok((a, b, report))
}

fn check_ranks(model: &MlpModel, ranks: &[usize]) -> Result<()> {
    if ranks.len() != model.depth() {
        return Err(invalid(format!(
            "{} ranks given for a {}-layer model",
            ranks.len(),
            model.depth()
        )));
    }
    Ok(())
}

/// Compresses every layer in order and reports per-layer and end-to-end
/// fidelity on the calibration data `x0`.
///
/// `relu_mle` applies only where the layer's output passes through a ReLU;
/// identity layers are handled by the convex solver.
pub fn compress_model(
    model: &MlpModel,
    x0: &DenseMatrix,
    ranks: &[usize],
    method: CompressionMethod,
    params: &CompressParams,
) -> Result<(MlpModel, CompressionReport)> {
    check_ranks(model, ranks)?;
    if x0.cols() != model.input_dim() {
        return Err(shape(format!(
            "calibration data has {} features but the model expects {}",
            x0.cols(),
            model.input_dim()
        )));
    }
    let mut x_orig = x0.clone();
    let mut x_comp = x0.clone();
    let mut layers = Vec::with_capacity(model.depth());
    let mut reports = Vec::with_capacity(model.depth());
    for (i, (layer, &r)) in model.layers().iter().zip(ranks).enumerate() {
        let step = || -> Result<(Layer, LayerReport)> {
            let lifted_orig = layer.lift_input(&x_orig)?;
            let lifted_comp = layer.lift_input(&x_comp)?;
            let layer_method = match (method, layer.activation()) {
                (CompressionMethod::ReluMle, Activation::Identity) => CompressionMethod::Convex,
                (m, _) => m,
            };
            let w = layer.effective_weight();
            let (a, b, mut report) =
                compress_layer(&lifted_orig, &lifted_comp, &w, r, layer_method, params)?;
            report.layer = i;
            let mut new_layer = Layer::factored(a, b, layer.activation())?;
            if layer.has_bias() {
                new_layer = new_layer.with_bias()?;
            }
            Ok((new_layer, report))
        };
        let (new_layer, report) = step().map_err(|e| e.at_layer(i))?;
        let next_orig = layer.forward(&x_orig).map_err(|e| e.at_layer(i))?;
        x_comp = match params.policy {
            CalibrationPolicy::Sequential => new_layer.forward(&x_comp).map_err(|e| e.at_layer(i))?,
            CalibrationPolicy::Original => next_orig.clone(),
        };
        x_orig = next_orig;
        layers.push(new_layer);
        reports.push(report);
    }
    let compressed = MlpModel::new(layers)?;
    let output_mse = model.forward(x0)?.mse(&compressed.forward(x0)?);
    let params_before: usize = reports.iter().map(|r| r.params_before).sum();
    let params_after: usize = reports.iter().map(|r| r.params_after).sum();
    Ok((
        compressed,
        CompressionReport {
            layers: reports,
            params_before,
            params_after,
            compression_ratio: params_after as f64 / params_before as f64,
            output_mse,
        },
    ))
}

/// Data-agnostic baseline: replaces every weight by its best rank-`rᵢ`
/// approximation, ignoring the data.
pub fn truncate_model(model: &MlpModel, ranks: &[usize]) -> Result<MlpModel> {
    check_ranks(model, ranks)?;
    let layers = model
        .layers()
        .iter()
        .zip(ranks)
        .enumerate()
        .map(|(i, (layer, &r))| {
            let build = || -> Result<Layer> {
                let (a, b) = balanced_factors(&truncate_rank(&layer.effective_weight(), r)?, r)?;
                let new_layer = Layer::factored(a, b, layer.activation())?;
                if layer.has_bias() {
                    new_layer.with_bias()
                } else {
                    Ok(new_layer)
                }
            };
            build().map_err(|e| e.at_layer(i))
        })
        .collect::<Result<Vec<_>>>()?;
    MlpModel::new(layers)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub output_mse: f64,
    /// MSE between the two models' activations after each layer.
    pub per_layer_mse: Vec<f64>,
}

pub fn evaluate(model_a: &MlpModel, model_b: &MlpModel, x: &DenseMatrix) -> Result<Evaluation> {
    if model_a.dims() != model_b.dims() {
        return Err(shape(format!(
            "architectures differ: {:?} vs {:?}",
            model_a.dims(),
            model_b.dims()
        )));
    }
    let acts_a = model_a.forward_collect(x)?;
    let acts_b = model_b.forward_collect(x)?;
    let per_layer_mse: Vec<f64> = acts_a[1..]
        .iter()
        .zip(&acts_b[1..])
        .map(|(a, b)| a.mse(b))
        .collect();
    Ok(Evaluation {
        output_mse: *per_layer_mse.last().unwrap(),
        per_layer_mse,
    })
}
