//! Scoring functions `m(d)`: a fully connected network with sigmoid hidden
//! layers and a linear output. With no hidden layers it is a linear model.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::QueryGroup;
use crate::{stream_rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn linear(input_dim: usize) -> Self {
        Self { input_dim, hidden: Vec::new() }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden }
    }

    /// Widths from input to the single output.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    /// `(fan_in, fan_out)` of each dense layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters stored flat, layer by layer: an `out × in` row-major weight
/// matrix followed by `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

/// A gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub values: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let values = vec![0.0; arch.num_params()];
        Ok(Self { arch, values })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = stream_rng(seed, 0x494e_4954, 0);
        let mut offset = 0;
        for (fan_in, fan_out) in params.arch.layers() {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params.values[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-r..r);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(params)
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.num_params() {
            return Err(Error::ShapeMismatch { expected: arch.num_params(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        Ok(Self { arch, values })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// `w ← w + lr · gradient`. The gradient's sign already encodes the
    /// objective, so this ascends it.
    pub fn sgd_step(&mut self, gradient: &ParamGradient, learning_rate: f64) -> Result<()> {
        if gradient.values.len() != self.values.len() {
            return Err(Error::ShapeMismatch { expected: self.values.len(), actual: gradient.values.len() });
        }
        if let Some(i) = gradient.values.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(format!(
                "parameter {i} of {} has gradient {}",
                self.values.len(),
                gradient.values[i]
            )));
        }
        for (w, g) in self.values.iter_mut().zip(&gradient.values) {
            *w += learning_rate * g;
        }
        Ok(())
    }
}

/// Activations kept from the forward pass: the inputs to each dense layer,
/// one row per item.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    n_items: usize,
    inputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn n_items(&self) -> usize {
        self.n_items
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scores items given their row-major features.
pub fn forward(params: &ModelParams, features: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
    let dim = params.arch.input_dim;
    if features.is_empty() || !features.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch { expected: dim, actual: features.len() });
    }
    let n_items = features.len() / dim;
    let layers = params.arch.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut current = features.to_vec();
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = &params.values[offset..offset + fan_in * fan_out];
        let b = &params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let hidden = l + 1 < layers.len();
        let mut next = Vec::with_capacity(n_items * fan_out);
        for row in current.chunks_exact(fan_in) {
            for (j, bias) in b.iter().enumerate() {
                let z = bias + w[j * fan_in..(j + 1) * fan_in].iter().zip(row).map(|(a, x)| a * x).sum::<f64>();
                next.push(if hidden { sigmoid(z) } else { z });
            }
        }
        inputs.push(std::mem::replace(&mut current, next));
    }
    Ok((current, ForwardTrace { n_items, inputs }))
}

pub fn score(params: &ModelParams, group: &QueryGroup) -> Result<(Vec<f64>, ForwardTrace)> {
    if group.feature_dim() != params.arch.input_dim {
        return Err(Error::ShapeMismatch { expected: params.arch.input_dim, actual: group.feature_dim() });
    }
    forward(params, group.features())
}

/// `Σ_d λ_d ∂m(d)/∂w` by backpropagation through the stored trace.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, lambda: &[f64]) -> Result<ParamGradient> {
    if lambda.len() != trace.n_items {
        return Err(Error::ShapeMismatch { expected: trace.n_items, actual: lambda.len() });
    }
    let layers = params.arch.layers();
    if trace.inputs.len() != layers.len() || trace.inputs[0].len() != trace.n_items * params.arch.input_dim {
        return Err(Error::InvalidArgument("trace does not match the model architecture".into()));
    }
    let mut offsets = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for &(fan_in, fan_out) in &layers {
        offsets.push(offset);
        offset += fan_in * fan_out + fan_out;
    }

    let mut grad = ParamGradient::zeros(params.values.len());
    // Upstream derivative w.r.t. each layer's pre-activation output.
    let mut delta = lambda.to_vec();
    for l in (0..layers.len()).rev() {
        let (fan_in, fan_out) = layers[l];
        let off = offsets[l];
        let input = &trace.inputs[l];
        let w = &params.values[off..off + fan_in * fan_out];
        {
            let (gw, gb) = grad.values[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (row, d_out) in input.chunks_exact(fan_in).zip(delta.chunks_exact(fan_out)) {
                for (j, &dj) in d_out.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    for (g, x) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(row) {
                        *g += dj * x;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        // Inputs of layer l are sigmoid outputs a, with da/dz = a (1 - a).
        let mut prev = vec![0.0; trace.n_items * fan_in];
        for ((p_row, a_row), d_out) in
            prev.chunks_exact_mut(fan_in).zip(input.chunks_exact(fan_in)).zip(delta.chunks_exact(fan_out))
        {
            for (j, &dj) in d_out.iter().enumerate() {
                for (p, wji) in p_row.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                    *p += dj * wji;
                }
            }
            for (p, a) in p_row.iter_mut().zip(a_row) {
                *p *= a * (1.0 - a);
            }
        }
        delta = prev;
    }
    Ok(grad)
}

const CHECKPOINT_FORMAT: &str = "plrank-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: Architecture,
    params: Vec<f64>,
}

impl ModelParams {
    /// JSON checkpoint: format tag, version, architecture and flat parameters.
    pub fn to_json(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch.clone(),
            params: self.values.clone(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        Self::from_values(ckpt.architecture, ckpt.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
