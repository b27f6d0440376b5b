//! Fully-connected autoencoder with hand-written backpropagation and Adam.
//!
//! Layer widths are `input, hidden..., embed, hidden.rev()..., input`. Hidden
//! layers use the chosen activation; the bottleneck and the output layer are
//! linear. The reconstruction loss is the batch mean of the per-sample squared
//! Euclidean error.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Dimension, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::serde_arrays;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("forward cache is stale (cache version {cache}, model version {model})")]
    StaleCache { cache: u64, model: u64 },
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedCheckpoint(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(ModelError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Weight is `fan_in x fan_out`, so a layer computes `x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "serde_arrays::matrix")]
    pub weight: Array2<f64>,
    #[serde(with = "serde_arrays::vector")]
    pub bias: Array1<f64>,
}

/// Gradients (or Adam moments) with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    #[serde(with = "serde_arrays::matrix_list")]
    pub weights: Vec<Array2<f64>>,
    #[serde(with = "serde_arrays::vector_list")]
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(layers: &[Layer]) -> Self {
        Self {
            weights: layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn matches(&self, layers: &[Layer]) -> bool {
        self.weights.len() == layers.len()
            && self.biases.len() == layers.len()
            && layers.iter().zip(&self.weights).all(|(l, w)| l.weight.dim() == w.dim())
            && layers.iter().zip(&self.biases).all(|(l, b)| l.bias.len() == b.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl AdamState {
    pub fn new(layers: &[Layer]) -> Self {
        Self {
            step: 0,
            first_moment: Gradients::zeros_like(layers),
            second_moment: Gradients::zeros_like(layers),
        }
    }
}

/// Bias-corrected Adam update of one parameter tensor.
pub(crate) fn adam_update<D: Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    step: u64,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let (lr, eps) = (config.learning_rate, config.adam_eps);
    Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

/// Activations retained by [`AutoencoderModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every layer.
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    adam: AdamState,
    #[serde(skip)]
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: AutoencoderModel,
}

impl AutoencoderModel {
    /// He-uniform weights from a seeded generator, zero biases.
    pub fn build(
        input_dim: usize,
        embed_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || embed_dim == 0 || hidden.contains(&0) {
            return Err(ModelError::InvalidDimension(format!(
                "input {input_dim}, embed {embed_dim}, hidden {hidden:?}"
            )));
        }
        let mut layer_dims = vec![input_dim];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(embed_dim);
        layer_dims.extend(hidden.iter().rev());
        layer_dims.push(input_dim);

        let mut rng = seed::rng(seed);
        let layers: Vec<Layer> = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let adam = AdamState::new(&layers);
        Ok(Self {
            layer_dims,
            layers,
            activation,
            adam,
            version: 0,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.layer_dims[self.encoder_depth()]
    }

    /// Number of encoder layers; layer `encoder_depth() - 1` emits Z.
    pub fn encoder_depth(&self) -> usize {
        self.layers.len() / 2
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(&self.layers);
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn is_linear(&self, layer: usize) -> bool {
        layer == self.encoder_depth() - 1 || layer == self.layers.len() - 1
    }

    fn check_width(&self, x: ArrayView2<f64>) -> Result<(), ModelError> {
        if x.ncols() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: format!("{} columns", self.input_dim()),
                found: format!("{} columns", x.ncols()),
            });
        }
        Ok(())
    }

    /// Returns `(Z, Xhat, cache)`.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>, ForwardCache), ModelError> {
        self.check_width(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = batch.to_owned();
        let mut z = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let p = a.dot(&layer.weight) + &layer.bias;
            let out = if self.is_linear(i) {
                p.clone()
            } else {
                p.mapv(|v| self.activation.apply(v))
            };
            if i == self.encoder_depth() - 1 {
                z = Some(out.clone());
            }
            inputs.push(a);
            pre.push(p);
            a = out;
        }
        let cache = ForwardCache {
            version: self.version,
            inputs,
            pre,
        };
        Ok((z.expect("encoder has at least one layer"), a, cache))
    }

    /// Encoder output only.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_width(x)?;
        let mut a = x.to_owned();
        for i in 0..self.encoder_depth() {
            let layer = &self.layers[i];
            let p = a.dot(&layer.weight) + &layer.bias;
            a = if self.is_linear(i) {
                p
            } else {
                p.mapv(|v| self.activation.apply(v))
            };
        }
        Ok(a)
    }

    /// Reverse-mode gradients. `d_z`, when given, is added to the gradient
    /// arriving at the bottleneck output.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_xhat: ArrayView2<f64>,
        d_z: Option<ArrayView2<f64>>,
    ) -> Result<Gradients, ModelError> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(ModelError::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let batch = cache.inputs[0].nrows();
        if d_xhat.dim() != (batch, self.input_dim()) {
            return Err(ModelError::DimensionMismatch {
                expected: format!("{:?}", (batch, self.input_dim())),
                found: format!("{:?}", d_xhat.dim()),
            });
        }
        if let Some(dz) = d_z {
            if dz.dim() != (batch, self.embed_dim()) {
                return Err(ModelError::DimensionMismatch {
                    expected: format!("{:?}", (batch, self.embed_dim())),
                    found: format!("{:?}", dz.dim()),
                });
            }
        }
        let mut grads = Gradients::zeros_like(&self.layers);
        let mut delta = d_xhat.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i == self.encoder_depth() - 1 {
                if let Some(dz) = d_z {
                    delta += &dz;
                }
            }
            if !self.is_linear(i) {
                Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .for_each(|d, &p| *d *= self.activation.derivative(p));
            }
            grads.weights[i] = cache.inputs[i].t().dot(&delta);
            grads.biases[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight.t());
            }
        }
        Ok(grads)
    }

    /// One Adam step over every parameter.
    pub fn adam_step(&mut self, grads: &Gradients, config: &TrainConfig) -> Result<(), ModelError> {
        if !grads.matches(&self.layers) {
            return Err(ModelError::DimensionMismatch {
                expected: "gradients shaped like the model".into(),
                found: "mismatched gradient shapes".into(),
            });
        }
        self.adam.step += 1;
        let step = self.adam.step;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            adam_update(
                &mut layer.weight,
                &grads.weights[i],
                &mut self.adam.first_moment.weights[i],
                &mut self.adam.second_moment.weights[i],
                step,
                config,
            );
            adam_update(
                &mut layer.bias,
                &grads.biases[i],
                &mut self.adam.first_moment.biases[i],
                &mut self.adam.second_moment.biases[i],
                step,
                config,
            );
        }
        self.version += 1;
        Ok(())
    }

    /// Reconstruction loss of the whole of `x`.
    pub fn loss(&self, x: ArrayView2<f64>) -> Result<f64, ModelError> {
        let (_, xhat, _) = self.forward(x)?;
        reconstruction_loss(x, xhat.view())
    }

    /// Mini-batch Adam on the reconstruction loss. Returns the full-data loss
    /// after every epoch.
    pub fn pretrain(&mut self, x: ArrayView2<f64>, config: &TrainConfig) -> Result<Vec<f64>, ModelError> {
        config.validate()?;
        self.check_width(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidDimension("training data must be finite".into()));
        }
        let n = x.nrows();
        let mut rng = seed::rng(config.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch = x.select(Axis(0), chunk);
                let (_, xhat, cache) = self.forward(batch.view())?;
                let d_xhat = reconstruction_grad(batch.view(), xhat.view());
                let grads = self.backward(&cache, d_xhat.view(), None)?;
                self.adam_step(&grads, config)?;
            }
            let loss = self.loss(x)?;
            if !loss.is_finite() || !self.all_finite() {
                return Err(ModelError::NonFiniteLoss(epoch));
            }
            history.push(loss);
        }
        Ok(history)
    }

    pub fn save_json<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(w, &ckpt)?;
        Ok(())
    }

    pub fn load_json<R: Read>(r: R) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::UnsupportedCheckpoint(ckpt.format_version));
        }
        let m = ckpt.model;
        let dims_ok = m.layers.len() + 1 == m.layer_dims.len()
            && m.layers.len() >= 2
            && m.layers.len() % 2 == 0
            && m
                .layers
                .iter()
                .enumerate()
                .all(|(i, l)| l.weight.dim() == (m.layer_dims[i], m.layer_dims[i + 1]) && l.bias.len() == m.layer_dims[i + 1])
            && m.layer_dims.iter().eq(m.layer_dims.iter().rev())
            && m.adam.first_moment.matches(&m.layers)
            && m.adam.second_moment.matches(&m.layers);
        if !dims_ok {
            return Err(ModelError::InvalidDimension("checkpoint shapes are inconsistent".into()));
        }
        Ok(m)
    }
}

/// Mean over samples of the squared Euclidean reconstruction error.
pub fn reconstruction_loss(x: ArrayView2<f64>, xhat: ArrayView2<f64>) -> Result<f64, ModelError> {
    if x.dim() != xhat.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: format!("{:?}", x.dim()),
            found: format!("{:?}", xhat.dim()),
        });
    }
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = Zip::from(x).and(xhat).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(sum / x.nrows() as f64)
}

/// Gradient of [`reconstruction_loss`] with respect to `xhat`.
pub fn reconstruction_grad(x: ArrayView2<f64>, xhat: ArrayView2<f64>) -> Array2<f64> {
    let scale = 2.0 / x.nrows().max(1) as f64;
    Zip::from(xhat).and(x).map_collect(|&h, &a| scale * (h - a))
}
