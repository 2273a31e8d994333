//! Layer stack built from declarative specs, with seeded initialization
//! and per-step parameter binding into the tape.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Real, Var};
use crate::{NeuralError, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LN_EPS: f64 = 1e-5;

/// One architecture row. Stacks are built from slices of these; channel
/// and feature counts are inferred from the input shape at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d { out_channels: usize, kernel: usize, stride: usize },
    BatchNorm,
    LayerNorm,
    Relu,
    Linear { out_features: usize },
    Flatten,
}

/// Forward mode: batch statistics vs running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which tensor of a layer a binding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

/// A parameter's tape handle for the current step.
#[derive(Debug, Clone, Copy)]
pub struct ParamBinding {
    pub layer: usize,
    pub kind: ParamKind,
    pub var: Var,
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ArrayD<f64>,
    pub bias: ArrayD<f64>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    /// (in_features, out_features).
    pub weight: ArrayD<f64>,
    pub bias: ArrayD<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: ArrayD<f64>,
    pub beta: ArrayD<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gamma: ArrayD<f64>,
    pub beta: ArrayD<f64>,
}

/// A concrete layer with its parameters (kept in f64; cast into the
/// graph's element type when bound).
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2dLayer),
    Linear(LinearLayer),
    BatchNorm(BatchNormLayer),
    LayerNorm(LayerNormLayer),
    Relu,
    Flatten,
}

impl Layer {
    fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Linear(_) => "linear",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::LayerNorm(_) => "layer_norm",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }
}

/// An ordered stack of layers with a name for error messages.
#[derive(Debug, Clone)]
pub struct Stack {
    pub name: String,
    pub layers: Vec<Layer>,
    /// Specs the stack was built from, for checkpoint round trips.
    specs: Vec<LayerSpec>,
    /// Shape (without batch axis) each layer expects, for validation.
    input_shapes: Vec<Vec<usize>>,
    /// Shape (without batch axis) of the stack output.
    output_shape: Vec<usize>,
}

impl Stack {
    /// Builds a stack from specs, inferring channel/feature counts from
    /// `input_shape` (without the batch axis). Weights use uniform
    /// fan-in initialization from the seeded generator; biases are zero;
    /// norm scales are one.
    pub fn build(
        name: &str,
        specs: &[LayerSpec],
        input_shape: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut input_shapes = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            input_shapes.push(shape.clone());
            match *spec {
                LayerSpec::Conv2d { out_channels, kernel, stride } => {
                    if shape.len() != 3 {
                        return Err(NeuralError::shape_at(
                            format!("{name}[{i}] conv2d"),
                            format!("needs (C, H, W) input, got {shape:?}"),
                        ));
                    }
                    if kernel % 2 == 0 || stride == 0 {
                        return Err(NeuralError::InvalidArgument(format!(
                            "{name}[{i}] conv2d: kernel must be odd, stride >= 1"
                        )));
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let fan_in = c * kernel * kernel;
                    let weight =
                        uniform_fan_in(rng, &[out_channels, c, kernel, kernel], fan_in);
                    let bias = ArrayD::zeros(IxDyn(&[out_channels]));
                    layers.push(Layer::Conv2d(Conv2dLayer { weight, bias, stride }));
                    shape = vec![out_channels, h.div_ceil(stride), w.div_ceil(stride)];
                }
                LayerSpec::BatchNorm => {
                    if shape.is_empty() {
                        return Err(NeuralError::shape_at(
                            format!("{name}[{i}] batch_norm"),
                            "needs a channel axis".to_string(),
                        ));
                    }
                    let c = shape[0];
                    layers.push(Layer::BatchNorm(BatchNormLayer {
                        gamma: ArrayD::ones(IxDyn(&[c])),
                        beta: ArrayD::zeros(IxDyn(&[c])),
                        running_mean: vec![0.0; c],
                        running_var: vec![1.0; c],
                    }));
                }
                LayerSpec::LayerNorm => {
                    if shape.len() != 1 {
                        return Err(NeuralError::shape_at(
                            format!("{name}[{i}] layer_norm"),
                            format!("needs flat features, got {shape:?}"),
                        ));
                    }
                    let f = shape[0];
                    layers.push(Layer::LayerNorm(LayerNormLayer {
                        gamma: ArrayD::ones(IxDyn(&[f])),
                        beta: ArrayD::zeros(IxDyn(&[f])),
                    }));
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Flatten => {
                    let flat: usize = shape.iter().product();
                    layers.push(Layer::Flatten);
                    shape = vec![flat];
                }
                LayerSpec::Linear { out_features } => {
                    if shape.len() != 1 {
                        return Err(NeuralError::shape_at(
                            format!("{name}[{i}] linear"),
                            format!("needs flat features, got {shape:?} (add Flatten first)"),
                        ));
                    }
                    let in_features = shape[0];
                    let weight =
                        uniform_fan_in(rng, &[in_features, out_features], in_features);
                    let bias = ArrayD::zeros(IxDyn(&[out_features]));
                    layers.push(Layer::Linear(LinearLayer { weight, bias }));
                    shape = vec![out_features];
                }
            }
        }
        Ok(Self {
            name: name.to_string(),
            layers,
            specs: specs.to_vec(),
            input_shapes,
            output_shape: shape,
        })
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// The build-time input shape (without the batch axis).
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shapes[0]
    }

    /// Running statistics of every BatchNorm layer, keyed by layer index.
    pub fn running_stats(&self) -> Vec<(usize, Vec<f64>, Vec<f64>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::BatchNorm(bn) => {
                    Some((i, bn.running_mean.clone(), bn.running_var.clone()))
                }
                _ => None,
            })
            .collect()
    }

    /// Restores BatchNorm running statistics saved by [`running_stats`].
    pub fn set_running_stats(&mut self, stats: &[(usize, Vec<f64>, Vec<f64>)]) -> Result<()> {
        for (i, mean, var) in stats {
            match self.layers.get_mut(*i) {
                Some(Layer::BatchNorm(bn)) => {
                    if bn.running_mean.len() != mean.len() || bn.running_var.len() != var.len() {
                        return Err(NeuralError::shape(format!(
                            "running stats length mismatch at layer {i}"
                        )));
                    }
                    bn.running_mean.clone_from(mean);
                    bn.running_var.clone_from(var);
                }
                _ => {
                    return Err(NeuralError::InvalidArgument(format!(
                        "layer {i} is not a BatchNorm layer"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Runs the stack on `input` (batch axis first), binding every
    /// parameter as a trainable leaf. Returns the output and the
    /// bindings for the optimizer.
    pub fn forward<T: Real>(
        &mut self,
        g: &mut Graph<T>,
        input: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<ParamBinding>)> {
        let got = g.value(input).shape().to_vec();
        if got.len() < 2 {
            return Err(NeuralError::shape_at(
                self.name.clone(),
                format!("input must have a batch axis, got {got:?}"),
            ));
        }
        let mut bindings = Vec::new();
        let mut x = input;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let expected = &self.input_shapes[i];
            let actual = &g.value(x).shape()[1..];
            if actual != expected.as_slice() {
                return Err(NeuralError::shape_at(
                    format!("{}[{i}] {}", self.name, layer.kind_name()),
                    format!("expected (batch, {expected:?}), got (batch, {actual:?})"),
                ));
            }
            x = match layer {
                Layer::Conv2d(conv) => {
                    let w = g.leaf(cast_into(&conv.weight), true);
                    let b = g.leaf(cast_into(&conv.bias), true);
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Weight, var: w });
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Bias, var: b });
                    g.conv2d(x, w, b, conv.stride)?
                }
                Layer::Linear(lin) => {
                    let w = g.leaf(cast_into(&lin.weight), true);
                    let b = g.leaf(cast_into(&lin.bias), true);
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Weight, var: w });
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Bias, var: b });
                    let h = g.matmul(x, w)?;
                    g.add_row_vec(h, b)?
                }
                Layer::BatchNorm(bn) => {
                    let gamma = g.leaf(cast_into(&bn.gamma), true);
                    let beta = g.leaf(cast_into(&bn.beta), true);
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Gamma, var: gamma });
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Beta, var: beta });
                    match mode {
                        Mode::Train => {
                            let (y, stats) =
                                g.batch_norm(x, gamma, beta, T::from_f64(BN_EPS), None)?;
                            let (mean, var) = stats.expect("train mode returns stats");
                            for (r, m) in bn.running_mean.iter_mut().zip(mean.iter()) {
                                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m.into_f64();
                            }
                            for (r, v) in bn.running_var.iter_mut().zip(var.iter()) {
                                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v.into_f64();
                            }
                            y
                        }
                        Mode::Eval => {
                            let rm: Vec<T> =
                                bn.running_mean.iter().map(|&v| T::from_f64(v)).collect();
                            let rv: Vec<T> =
                                bn.running_var.iter().map(|&v| T::from_f64(v)).collect();
                            let (y, _) =
                                g.batch_norm(x, gamma, beta, T::from_f64(BN_EPS), Some((&rm, &rv)))?;
                            y
                        }
                    }
                }
                Layer::LayerNorm(ln) => {
                    let gamma = g.leaf(cast_into(&ln.gamma), true);
                    let beta = g.leaf(cast_into(&ln.beta), true);
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Gamma, var: gamma });
                    bindings.push(ParamBinding { layer: i, kind: ParamKind::Beta, var: beta });
                    g.layer_norm(x, gamma, beta, T::from_f64(LN_EPS))?
                }
                Layer::Relu => g.relu(x),
                Layer::Flatten => {
                    let b = g.value(x).shape()[0];
                    let flat: usize = g.value(x).shape()[1..].iter().product();
                    g.reshape(x, &[b, flat])?
                }
            };
        }
        Ok((x, bindings))
    }

    /// Mutable access to a bound parameter.
    pub fn param_mut(&mut self, layer: usize, kind: ParamKind) -> Result<&mut ArrayD<f64>> {
        let err = || {
            NeuralError::InvalidArgument(format!(
                "layer {layer} has no parameter {kind:?}"
            ))
        };
        match (&mut self.layers[layer], kind) {
            (Layer::Conv2d(l), ParamKind::Weight) => Ok(&mut l.weight),
            (Layer::Conv2d(l), ParamKind::Bias) => Ok(&mut l.bias),
            (Layer::Linear(l), ParamKind::Weight) => Ok(&mut l.weight),
            (Layer::Linear(l), ParamKind::Bias) => Ok(&mut l.bias),
            (Layer::BatchNorm(l), ParamKind::Gamma) => Ok(&mut l.gamma),
            (Layer::BatchNorm(l), ParamKind::Beta) => Ok(&mut l.beta),
            (Layer::LayerNorm(l), ParamKind::Gamma) => Ok(&mut l.gamma),
            (Layer::LayerNorm(l), ParamKind::Beta) => Ok(&mut l.beta),
            _ => Err(err()),
        }
    }

    /// All parameters with stable names like `ep[3].weight`.
    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out: Vec<(String, &ArrayD<f64>)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let name = |kind: &str| format!("{}[{i}].{kind}", self.name);
            match layer {
                Layer::Conv2d(l) => {
                    out.push((name("weight"), &l.weight));
                    out.push((name("bias"), &l.bias));
                }
                Layer::Linear(l) => {
                    out.push((name("weight"), &l.weight));
                    out.push((name("bias"), &l.bias));
                }
                Layer::BatchNorm(l) => {
                    out.push((name("gamma"), &l.gamma));
                    out.push((name("beta"), &l.beta));
                }
                Layer::LayerNorm(l) => {
                    out.push((name("gamma"), &l.gamma));
                    out.push((name("beta"), &l.beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// FNV-1a hash over the exact parameter bytes; used to assert phase
    /// isolation (a phase that must not touch a network leaves its hash
    /// unchanged).
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, p) in self.named_params() {
            for v in p.iter() {
                for byte in v.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape")
}

fn cast_into<T: Real>(x: &ArrayD<f64>) -> ArrayD<T> {
    x.mapv(T::from_f64)
}

/// Casts a graph-precision array back to the f64 parameter store.
pub fn cast_from<T: Real>(x: &ArrayD<T>) -> ArrayD<f64> {
    x.mapv(|v| v.into_f64())
}

/// Builds a seeded generator for deterministic initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
