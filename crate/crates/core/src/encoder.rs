//! Feedforward encoder `R^D -> R^K`: affine + ReLU hidden layers, then an
//! affine hash layer followed by `tanh(beta * z)`.
//!
//! Everything is row-major `Vec<f64>`; a batch of `B` inputs is a `B x D`
//! matrix. Loops run in a fixed order so a given seed reproduces parameters
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{binarize_unchecked, BinaryCode, ContinuousCode};
use crate::error::{Error, Result};

/// Learning-rate multiplier of the hash layer relative to lower layers.
pub const HASH_LAYER_LR_MULT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Hidden layer widths; empty means a single affine hash layer.
    pub hidden: Vec<usize>,
    /// Code length K.
    pub code_bits: usize,
    pub hash_lr_mult: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            code_bits: 16,
            hash_lr_mult: HASH_LAYER_LR_MULT,
        }
    }
}

/// One affine layer: `out x in` weights plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub lr_mult: f64,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize, lr_mult: f64) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            lr_mult,
        }
    }
}

/// All encoder parameters. `revision` changes on every update so a stale
/// [`ForwardTrace`] can be detected.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    revision: u64,
}

impl EncoderParams {
    /// Glorot-uniform initialization, `U(±sqrt(6 / (fan_in + fan_out)))`,
    /// biases zero.
    pub fn init(input_dim: usize, config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(input_dim, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(params)
    }

    pub fn zeros(input_dim: usize, config: &EncoderConfig) -> Result<Self> {
        if input_dim == 0 || config.code_bits == 0 || config.code_bits > crate::codes::MAX_BITS {
            return Err(Error::invalid("encoder dimensions out of range"));
        }
        if config.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(config.hash_lr_mult > 0.0 && config.hash_lr_mult.is_finite()) {
            return Err(Error::invalid("hash-layer multiplier must be positive"));
        }
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        widths.push(config.code_bits);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let mult = if l + 1 == n { config.hash_lr_mult } else { 1.0 };
                Layer::zeros(widths[l], widths[l + 1], mult)
            })
            .collect();
        Ok(Self { layers, revision: 0 })
    }

    /// Assembles parameters from explicit layers; shapes must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(Error::invalid(format!("layer {l} has inconsistent shapes")));
            }
            if l > 0 && layers[l - 1].outputs != layer.inputs {
                return Err(Error::invalid(format!("layer {l} does not chain")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Self { layers, revision: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for tests and tooling; bumps the revision.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.revision += 1;
        &mut self.layers
    }

    /// `[D, hidden..., K]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn code_bits(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    revision: u64,
    beta: f64,
    batch: usize,
    input: Vec<f64>,
    /// Per-layer pre-activations (`z` for the hash layer).
    pre: Vec<Vec<f64>>,
    /// Per-layer outputs (`g = tanh(beta z)` for the hash layer).
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Row-major `B x K` continuous codes.
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or_default()
    }

    /// Row-major `B x K` hash-layer pre-activations.
    pub fn hash_preactivation(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or_default()
    }

    pub fn codes(&self) -> Vec<ContinuousCode> {
        let k = self.output().len() / self.batch.max(1);
        self.output()
            .chunks_exact(k.max(1))
            .map(|row| ContinuousCode::new(row.to_vec()).expect("tanh output lies in [-1, 1]"))
            .collect()
    }
}

fn affine(layer: &Layer, input: &[f64], batch: usize, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(batch * layer.outputs);
    for b in 0..batch {
        let x = &input[b * layer.inputs..(b + 1) * layer.inputs];
        for o in 0..layer.outputs {
            let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let mut acc = layer.bias[o];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Forward pass over a row-major `B x D` batch.
pub fn forward_trace(params: &EncoderParams, beta: f64, inputs: &[f64]) -> Result<ForwardTrace> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let d = params.input_dim();
    if !inputs.len().is_multiple_of(d) {
        return Err(Error::invalid(format!(
            "input length {} is not a multiple of dimension {d}",
            inputs.len()
        )));
    }
    let batch = inputs.len() / d;
    let n_layers = params.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let input = if l == 0 { inputs } else { &post[l - 1] };
        let mut z = Vec::new();
        affine(layer, input, batch, &mut z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("forward pass, layer {l}")));
        }
        let a = if l + 1 == n_layers {
            z.iter().map(|&v| (beta * v).tanh()).collect()
        } else {
            z.iter().map(|&v| v.max(0.0)).collect()
        };
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardTrace {
        revision: params.revision,
        beta,
        batch,
        input: inputs.to_vec(),
        pre,
        post,
    })
}

/// Forward pass returning the continuous codes alongside the trace.
pub fn forward(params: &EncoderParams, beta: f64, inputs: &[f64]) -> Result<(Vec<ContinuousCode>, ForwardTrace)> {
    let trace = forward_trace(params, beta, inputs)?;
    Ok((trace.codes(), trace))
}

/// Hash-layer pre-activations `z` for a batch (no tanh).
pub fn hash_preactivations(params: &EncoderParams, inputs: &[f64]) -> Result<Vec<f64>> {
    let mut trace = forward_trace(params, 1.0, inputs)?;
    Ok(trace.pre.pop().unwrap_or_default())
}

/// `sgn(z)` codes for every row of a batch.
pub fn encode_batch(params: &EncoderParams, inputs: &[f64]) -> Result<Vec<BinaryCode>> {
    let z = hash_preactivations(params, inputs)?;
    let k = params.code_bits();
    Ok(z.chunks_exact(k).map(binarize_unchecked).collect())
}

/// Per-layer gradients, or momentum buffers, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn matches(&self, params: &EncoderParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weights.len() == p.weights.len() && g.bias.len() == p.bias.len())
    }
}

/// Exact gradients of a loss with respect to every parameter, given
/// `upstream = dJ/dg` (row-major `B x K`).
pub fn backward(trace: &ForwardTrace, params: &EncoderParams, upstream: &[f64]) -> Result<Gradients> {
    if trace.revision != params.revision || trace.pre.len() != params.layers.len() {
        return Err(Error::ContractViolation(
            "forward trace does not belong to the current parameters".into(),
        ));
    }
    if upstream.len() != trace.output().len() {
        return Err(Error::invalid("upstream gradient shape does not match the output"));
    }
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite upstream gradient"));
    }
    let beta = trace.beta;
    let batch = trace.batch;
    let mut grads = Gradients::zeros_like(params);
    // dJ/dz for the hash layer: dg/dz = beta (1 - g^2).
    let mut delta: Vec<f64> = upstream
        .iter()
        .zip(trace.output())
        .map(|(u, g)| u * beta * (1.0 - g * g))
        .collect();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let grad = &mut grads.layers[l];
        for b in 0..batch {
            let x = &input[b * layer.inputs..(b + 1) * layer.inputs];
            let dz = &delta[b * layer.outputs..(b + 1) * layer.outputs];
            for (o, &dzo) in dz.iter().enumerate() {
                grad.bias[o] += dzo;
                if dzo != 0.0 {
                    let gw = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, xi) in gw.iter_mut().zip(x) {
                        *g += dzo * xi;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let below = &trace.pre[l - 1];
        let mut next = vec![0.0; batch * layer.inputs];
        for b in 0..batch {
            let dz = &delta[b * layer.outputs..(b + 1) * layer.outputs];
            let dx = &mut next[b * layer.inputs..(b + 1) * layer.inputs];
            for (o, &dzo) in dz.iter().enumerate() {
                if dzo != 0.0 {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (d, wi) in dx.iter_mut().zip(w) {
                        *d += dzo * wi;
                    }
                }
            }
            // ReLU derivative, taken as 0 at 0.
            for (d, &z) in dx.iter_mut().zip(&below[b * layer.inputs..(b + 1) * layer.inputs]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}

/// SGD hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// One momentum SGD update:
/// `v = momentum * v + grad + decay * param`, `param -= lr * mult * v`.
///
/// Nothing is written if any updated value would be non-finite.
pub fn sgd_step(
    params: &mut EncoderParams,
    velocity: &mut Gradients,
    grads: &Gradients,
    config: &SgdConfig,
) -> Result<()> {
    config.validate()?;
    if !grads.matches(params) || !velocity.matches(params) {
        return Err(Error::invalid("gradient shapes do not match the parameters"));
    }
    let mut new_velocity = velocity.clone();
    let mut new_params = params.layers.clone();
    for (l, layer) in new_params.iter_mut().enumerate() {
        let step = config.lr * layer.lr_mult;
        let (v, g) = (&mut new_velocity.layers[l], &grads.layers[l]);
        let pairs = layer
            .weights
            .iter_mut()
            .zip(v.weights.iter_mut().zip(&g.weights))
            .chain(layer.bias.iter_mut().zip(v.bias.iter_mut().zip(&g.bias)));
        for (p, (vel, grad)) in pairs {
            *vel = config.momentum * *vel + grad + config.weight_decay * *p;
            *p -= step * *vel;
            if !p.is_finite() || !vel.is_finite() {
                return Err(Error::numeric(format!("SGD update, layer {l}")));
            }
        }
    }
    params.layers = new_params;
    params.revision += 1;
    *velocity = new_velocity;
    Ok(())
}
