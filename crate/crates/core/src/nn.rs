//! Dense multilayer perceptrons with hand-written reverse-mode gradients and Adam.
//!
//! Networks are small (action dimension at most a handful, hidden widths up to a
//! few hundred) so everything works one sample at a time on plain `Vec<f64>`.
//! Weights are stored row-major as `outputs x inputs`. Hidden layers apply the
//! activation; the final layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};

/// Version stamped into every serialized network.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEFF: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation of GELU.
    #[default]
    Gelu,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
                let th = inner.tanh();
                let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let th = x.tanh();
                1.0 - th * th
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        };
        f.write_str(name)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetCheckpoint", into = "NetCheckpoint")]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Serialized form of a [`DenseNet`]: layer shapes plus row-major parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format_version: u32,
    pub activation: Activation,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl TryFrom<NetCheckpoint> for DenseNet {
    type Error = Error;

    fn try_from(ckpt: NetCheckpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported network checkpoint version {} (expected {})",
                ckpt.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        DenseNet::from_parameters(&ckpt.layer_sizes, ckpt.activation, ckpt.weights, ckpt.biases)
    }
}

impl From<DenseNet> for NetCheckpoint {
    fn from(net: DenseNet) -> Self {
        NetCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            activation: net.activation,
            layer_sizes: net.layer_sizes,
            weights: net.weights,
            biases: net.biases,
        }
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("a network needs at least input and output sizes"));
    }
    // Input width may be zero only if there is nothing to feed; outputs must exist.
    if layer_sizes[1..].contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    Ok(())
}

impl DenseNet {
    /// Random network with weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// and zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
        let biases = layer_sizes.windows(2).map(|p| vec![0.0; p[1]]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parameters(
        layer_sizes: &[usize],
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        check_dim("weight layer count", layers, weights.len())?;
        check_dim("bias layer count", layers, biases.len())?;
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            check_dim("weight matrix size", pair[0] * pair[1], weights[k].len())?;
            check_dim("bias vector size", pair[1], biases[k].len())?;
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Zero the final layer so the network initially outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.len() - 1;
        self.weights[last].iter_mut().for_each(|w| *w = 0.0);
        self.biases[last].iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.biases.iter()).flatten().all(|v| v.is_finite())
    }

    /// All parameters flattened layer by layer (weights then bias of each layer).
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.num_parameters(), flat.len())?;
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            b.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Polyak averaging: `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if online.layer_sizes != self.layer_sizes {
            return Err(Error::invalid("soft update between networks of different shapes"));
        }
        let blend = |dst: &mut Vec<f64>, src: &Vec<f64>| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        };
        for (dst, src) in self.weights.iter_mut().zip(&online.weights) {
            blend(dst, src);
        }
        for (dst, src) in self.biases.iter_mut().zip(&online.biases) {
            blend(dst, src);
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut current = x.to_vec();
        let last = self.weights.len() - 1;
        for k in 0..self.weights.len() {
            let mut z = self.affine(k, &current);
            if k != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            current = z;
        }
        Ok(current)
    }

    /// Forward pass that keeps every intermediate needed by [`DenseNet::backward_trace`].
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.weights.len());
        let last = self.weights.len() - 1;
        for k in 0..self.weights.len() {
            let input = if k == 0 { x } else { &post[k - 1] };
            let z = self.affine(k, input);
            let h = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(h);
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Vector-Jacobian product of `upstream` through the network at `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientTape> {
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<GradientTape> {
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        let layers = self.weights.len();
        let mut d_weights = vec![Vec::new(); layers];
        let mut d_biases = vec![Vec::new(); layers];
        let mut delta = upstream.to_vec();
        for k in (0..layers).rev() {
            if k != layers - 1 {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[k]) {
                    *d *= self.activation.derivative(z);
                }
            }
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient at layer {k}")));
            }
            let input = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let n_in = self.layer_sizes[k];
            let w = &self.weights[k];
            let mut dw = vec![0.0; w.len()];
            let mut d_input = vec![0.0; n_in];
            for (o, &g) in delta.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                let drow = &mut dw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    drow[i] = g * input[i];
                    d_input[i] += g * row[i];
                }
            }
            d_weights[k] = dw;
            d_biases[k] = delta;
            delta = d_input;
        }
        Ok(GradientTape {
            weights: d_weights,
            biases: d_biases,
            input: delta,
        })
    }

    fn affine(&self, k: usize, input: &[f64]) -> Vec<f64> {
        let n_in = self.layer_sizes[k];
        let w = &self.weights[k];
        self.biases[k]
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }
}

/// Parameter gradients shaped like a [`DenseNet`], plus the gradient with
/// respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    input: Vec<f64>,
}

impl GradientTape {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    /// Adds the parameter gradients of `other`; the input gradient is left alone.
    pub fn accumulate(&mut self, other: &GradientTape) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
            .for_each(|v| *v *= factor);
    }

    pub fn global_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales parameter gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flatten()
            .chain(self.input.iter())
            .all(|v| v.is_finite())
    }

    /// Parameter gradients in the same order as [`DenseNet::flat_parameters`].
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn shape_matches(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

/// Moment estimates and hyper-parameters of the Adam optimizer for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let zeros_w: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let zeros_b: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            m_weights: zeros_w.clone(),
            m_biases: zeros_b.clone(),
            v_weights: zeros_w,
            v_biases: zeros_b,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam descent step: parameters move against `tape`.
pub fn adam_step(net: &mut DenseNet, tape: &GradientTape, state: &mut AdamState) -> Result<()> {
    if !tape.shape_matches(net) || state.m_weights.len() != net.weights.len() {
        return Err(Error::invalid("gradient tape or optimizer state does not match network shape"));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    let update = |params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for k in 0..net.weights.len() {
        update(
            &mut net.weights[k],
            &tape.weights[k],
            &mut state.m_weights[k],
            &mut state.v_weights[k],
        );
        update(
            &mut net.biases[k],
            &tape.biases[k],
            &mut state.m_biases[k],
            &mut state.v_biases[k],
        );
    }
    if !net.is_finite() {
        return Err(Error::numeric("optimizer step produced non-finite parameters"));
    }
    Ok(())
}
