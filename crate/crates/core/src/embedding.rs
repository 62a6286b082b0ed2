//! The embedding map: a stack of affine layers with optional rectifiers,
//! with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, check_dims};
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Rectifier,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Rectifier => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Widths of hidden layers; empty means a single linear layer.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden: Vec::new(),
            hidden_activation: Activation::Rectifier,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    layers: Vec<Layer>,
}

impl EmbeddingModel {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(input_dim: usize, cfg: &ModelConfig) -> Result<Self> {
        if input_dim == 0 || cfg.embed_dim == 0 {
            return Err(Error::config("input and embedding dimensions must be >= 1"));
        }
        if cfg.hidden.len() > 2 {
            return Err(Error::config("at most 3 layers (2 hidden) are supported"));
        }
        if cfg.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        let mut rng = seeded_rng(cfg.seed);
        let mut dims = vec![input_dim];
        dims.extend(&cfg.hidden);
        dims.push(cfg.embed_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { cfg.hidden_activation };
                let mut layer = Layer::zeros(w[0], w[1], act);
                let s = 1.0 / (w[0] as f64).sqrt();
                for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *v = rng.random_range(-s..=s);
                }
                layer
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("model needs at least one layer"));
        }
        for l in &layers {
            check_dims(l.inputs * l.outputs, l.weights.len())?;
            check_dims(l.outputs, l.bias.len())?;
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::config("layer dimensions must be >= 1"));
            }
        }
        for w in layers.windows(2) {
            check_dims(w[0].outputs, w[1].inputs)?;
        }
        let model = EmbeddingModel { layers };
        if model.param_groups().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.param_groups().map(|g| g.len()).sum()
    }

    /// Parameter slices in a fixed order: per layer, weights then bias.
    pub fn param_groups(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn param_groups_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_dims(self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| linalg::dot(layer.row(o), &a) + layer.bias[o])
                .collect();
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding output is not finite".into()));
        }
        Ok((a, ForwardCache { inputs, pre }))
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(e, _)| e)
    }

    pub fn embed_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.embed(x)).collect()
    }

    /// Gradients of `⟨grad_out, e(x)⟩` w.r.t. every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<GradientBundle> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::Usage("forward cache does not belong to this model".into()));
        }
        check_dims(self.embed_dim(), grad_out.len())?;
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[li];
            check_dims(layer.inputs, input.len())?;
            let gz: Vec<f64> = g
                .iter()
                .zip(&cache.pre[li])
                .map(|(gi, &z)| gi * layer.activation.derivative(z))
                .collect();
            let mut weights = vec![0.0; layer.weights.len()];
            for (o, &go) in gz.iter().enumerate() {
                if go != 0.0 {
                    linalg::axpy(&mut weights[o * layer.inputs..(o + 1) * layer.inputs], go, input);
                }
            }
            let mut g_in = vec![0.0; layer.inputs];
            for (o, &go) in gz.iter().enumerate() {
                if go != 0.0 {
                    linalg::axpy(&mut g_in, go, layer.row(o));
                }
            }
            grads.push(LayerGrad { weights, bias: gz });
            g = g_in;
        }
        grads.reverse();
        Ok(GradientBundle { layers: grads, input: g })
    }
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients mirroring the shapes of an [`EmbeddingModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    pub input: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        GradientBundle {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            input: vec![0.0; model.input_dim()],
        }
    }

    /// Same order as [`EmbeddingModel::param_groups`].
    pub fn param_groups(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    /// `self += s * other` over parameter gradients (the input gradient is
    /// per-sample and left alone).
    pub fn accumulate(&mut self, other: &GradientBundle, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            linalg::axpy(&mut a.weights, s, &b.weights);
            linalg::axpy(&mut a.bias, s, &b.bias);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.param_groups().chain([self.input.as_slice()]).all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Squared Euclidean distance between two embeddings.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(linalg::sq_dist(a, b))
}

/// Rescales every vector to Euclidean norm `target_norm`, keeping direction.
pub fn rescale_to_norm(vectors: &[Vec<f64>], target_norm: f64) -> Result<Vec<Vec<f64>>> {
    if !(target_norm > 0.0) || !target_norm.is_finite() {
        return Err(Error::config(format!("target norm must be positive, got {target_norm}")));
    }
    vectors
        .iter()
        .map(|v| {
            let (u, _) = linalg::unit(v)?;
            Ok(linalg::scale(&u, target_norm))
        })
        .collect()
}
