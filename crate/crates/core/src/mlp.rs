//! Fully connected networks with dense or factored layers.
//!
//! A layer maps `X ↦ φ(X·W)`. Layers flagged with `bias` carry the bias as
//! the last row of `W` and see their input with a ones column appended.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::linalg::io::{load_matrix, save_matrix};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Relu => x.relu(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Dense(DenseMatrix),
    /// `W = A·B`
    Factored { a: DenseMatrix, b: DenseMatrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: LayerWeights,
    activation: Activation,
    bias: bool,
}

impl Layer {
    pub fn dense(w: DenseMatrix, activation: Activation) -> Self {
        Self {
            weights: LayerWeights::Dense(w),
            activation,
            bias: false,
        }
    }

    pub fn factored(a: DenseMatrix, b: DenseMatrix, activation: Activation) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(shape(format!(
                "factors {:?} and {:?} do not chain",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            weights: LayerWeights::Factored { a, b },
            activation,
            bias: false,
        })
    }

    /// Marks the last weight row as a folded bias.
    pub fn with_bias(mut self) -> Result<Self> {
        if self.weight_rows() < 2 {
            return Err(invalid("a bias layer needs at least two weight rows"));
        }
        self.bias = true;
        Ok(self)
    }

    pub fn weights(&self) -> &LayerWeights {
        &self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    fn weight_rows(&self) -> usize {
        match &self.weights {
            LayerWeights::Dense(w) => w.rows(),
            LayerWeights::Factored { a, .. } => a.rows(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight_rows() - usize::from(self.bias)
    }

    pub fn output_dim(&self) -> usize {
        match &self.weights {
            LayerWeights::Dense(w) => w.cols(),
            LayerWeights::Factored { b, .. } => b.cols(),
        }
    }

    /// Inner dimension of a factored layer, `None` for dense layers.
    pub fn rank(&self) -> Option<usize> {
        match &self.weights {
            LayerWeights::Dense(_) => None,
            LayerWeights::Factored { a, .. } => Some(a.cols()),
        }
    }

    /// Stored parameters, bias row included.
    pub fn param_count(&self) -> usize {
        match &self.weights {
            LayerWeights::Dense(w) => w.rows() * w.cols(),
            LayerWeights::Factored { a, b } => a.rows() * a.cols() + b.rows() * b.cols(),
        }
    }

    /// The full weight matrix (`A·B` for factored layers).
    pub fn effective_weight(&self) -> DenseMatrix {
        match &self.weights {
            LayerWeights::Dense(w) => w.clone(),
            LayerWeights::Factored { a, b } => a.matmul(b),
        }
    }

    /// The layer input as the weight sees it (ones column appended for bias layers).
    pub fn lift_input(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(shape(format!(
                "layer expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(if self.bias { x.with_ones_column() } else { x.clone() })
    }

    /// Pre-activation `X·W`; factored layers compute `(X·A)·B`.
    pub fn pre_activation(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let x = self.lift_input(x)?;
        Ok(match &self.weights {
            LayerWeights::Dense(w) => x.matmul(w),
            LayerWeights::Factored { a, b } => x.matmul(a).matmul(b),
        })
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.activation.apply(self.pre_activation(x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("a model needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `[N₀, N₁, …, N_L]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, x0: &DenseMatrix) -> Result<DenseMatrix> {
        let mut x = x0.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x).map_err(|e| e.at_layer(i))?;
        }
        Ok(x)
    }

    /// `[X⁽⁰⁾, X⁽¹⁾, …, X⁽ᴸ⁾]` with `X⁽⁰⁾ = x0`.
    pub fn forward_collect(&self, x0: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x0.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(&acts[i]).map_err(|e| e.at_layer(i))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Writes `manifest` plus one LRM1 file per weight or factor into the
    /// manifest's directory.
    pub fn save(&self, manifest: impl AsRef<Path>) -> Result<()> {
        let manifest = manifest.as_ref();
        let dir = manifest.parent().unwrap_or(Path::new(""));
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
        let mut entries = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let n = i + 1;
            let mut entry = LayerEntry {
                weight: None,
                a: None,
                b: None,
                activation: layer.activation,
                bias: layer.bias,
            };
            match &layer.weights {
                LayerWeights::Dense(w) => {
                    let name = format!("w{n}.lrm");
                    save_matrix(dir.join(&name), w)?;
                    entry.weight = Some(name);
                }
                LayerWeights::Factored { a, b } => {
                    let (na, nb) = (format!("l{n}_a.lrm"), format!("l{n}_b.lrm"));
                    save_matrix(dir.join(&na), a)?;
                    save_matrix(dir.join(&nb), b)?;
                    entry.a = Some(na);
                    entry.b = Some(nb);
                }
            }
            entries.push(entry);
        }
        let json = serde_json::to_string_pretty(&Manifest { layers: entries })?;
        fs::write(manifest, json + "\n")?;
        Ok(())
    }

    /// Reads a manifest; weight paths are relative to its directory.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let parsed: Manifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        let resolve = |name: &str| -> PathBuf { dir.join(name) };
        let mut layers = Vec::with_capacity(parsed.layers.len());
        for (i, entry) in parsed.layers.into_iter().enumerate() {
            let layer = match (entry.weight, entry.a, entry.b) {
                (Some(w), None, None) => Layer::dense(load_matrix(resolve(&w))?, entry.activation),
                (None, Some(a), Some(b)) => Layer::factored(
                    load_matrix(resolve(&a))?,
                    load_matrix(resolve(&b))?,
                    entry.activation,
                )
                .map_err(|e| e.at_layer(i))?,
                _ => {
                    return Err(Error::Format(format!(
                        "layer {i} needs either \"weight\" or both \"a\" and \"b\""
                    )))
                }
            };
            let layer = if entry.bias {
                layer.with_bias().map_err(|e| e.at_layer(i))?
            } else {
                layer
            };
            layers.push(layer);
        }
        Self::new(layers)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<String>,
    activation: Activation,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    bias: bool,
}
