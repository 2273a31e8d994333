//! The autodiff tape: eagerly evaluated ops recorded in topological
//! order, differentiated by a single reverse sweep that visits each
//! node exactly once.

use ndarray::{ArrayD, Axis, Dimension, Ix1, Ix2, Ix4, IxDyn};
use num_traits::Float;

use crate::{NeuralError, Result};

/// Element types the engine runs on. Training uses `f32`; gradient
/// checks run the same graphs in `f64`.
pub trait Real:
    Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone)]
enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulScalar(usize, T),
    Relu(usize),
    Abs(usize),
    Square(usize),
    Sqrt(usize),
    /// (B, K) x (K, N).
    Matmul(usize, usize),
    /// (B, N) + (N,), broadcast over rows.
    AddRowVec(usize, usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    /// Batch statistics; `mean` and `inv_std` are per channel.
    BatchNormTrain {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Running statistics; an affine map per channel.
    BatchNormEval {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Row-wise normalization over the last axis of a (B, F) input.
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Reshape(usize),
    /// Concatenation of two matrices along axis 1.
    Concat2(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    /// (B, rest...) summed over all trailing axes -> (B,).
    SumRows(usize),
    /// (B, K, D) minus its per-sample mean over axis 1.
    CenterRows(usize),
}

struct Node<T: Real> {
    value: ArrayD<T>,
    grad: Option<ArrayD<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// A recorded computation. Build one per training step: insert leaves,
/// apply ops, call [`Graph::backward`] once, read gradients.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf tensor. Trainable leaves receive gradients.
    pub fn leaf(&mut self, value: ArrayD<T>, trainable: bool) -> Var {
        self.push(value, trainable, Op::Leaf)
    }

    /// Inserts a non-trainable data tensor.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> Result<T> {
        let value = &self.nodes[v.0].value;
        if value.len() != 1 {
            return Err(NeuralError::shape(format!(
                "expected scalar, got shape {:?}",
                value.shape()
            )));
        }
        Ok(*value.iter().next().expect("len checked"))
    }

    /// Gradient of a node, if backward produced one.
    pub fn grad(&self, v: Var) -> Result<&ArrayD<T>> {
        self.nodes[v.0]
            .grad
            .as_ref()
            .ok_or_else(|| NeuralError::Usage("node has no gradient; run backward first".into()))
    }

    fn push(&mut self, value: ArrayD<T>, needs_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(NeuralError::shape(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape()
            )));
        }
        Ok(())
    }

    // ── Elementwise ops ──────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, ng, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, ng, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, ng, Op::Mul(a.0, b.0)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v * s);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::MulScalar(a.0, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let zero = T::zero();
        let value = self.nodes[a.0].value.mapv(|v| if v > zero { v } else { zero });
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Relu(a.0))
    }

    /// |x|; the derivative at 0 is taken as 0 (sign convention).
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.abs());
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v * v);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Square(a.0))
    }

    /// sqrt(x); the derivative at 0 is taken as 0 so that exact-zero
    /// losses do not produce infinities.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].value.iter().any(|v| *v < T::zero()) {
            return Err(NeuralError::InvalidArgument("sqrt of negative value".into()));
        }
        let value = self.nodes[a.0].value.mapv(|v| v.sqrt());
        let ng = self.needs(a.0);
        Ok(self.push(value, ng, Op::Sqrt(a.0)))
    }

    // ── Linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(NeuralError::shape(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let a2 = av.view().into_dimensionality::<Ix2>().expect("checked 2-d");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("checked 2-d");
        let value = a2.dot(&b2).into_dyn();
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, ng, Op::Matmul(a.0, b.0)))
    }

    /// (B, N) + (N,) broadcast over rows.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.ndim() != 2 || bv.ndim() != 1 || av.shape()[1] != bv.shape()[0] {
            return Err(NeuralError::shape(format!(
                "add_row_vec: {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let b1 = bv.view().into_dimensionality::<Ix1>().expect("checked 1-d");
        let value = (&av.view().into_dimensionality::<Ix2>().expect("checked") + &b1).into_dyn();
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, ng, Op::AddRowVec(a.0, b.0)))
    }

    // ── Structural ops ───────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.len() != shape.iter().product::<usize>() {
            return Err(NeuralError::shape(format!(
                "reshape {:?} -> {:?}",
                av.shape(),
                shape
            )));
        }
        let flat: Vec<T> = av.iter().copied().collect();
        let value = ArrayD::from_shape_vec(IxDyn(shape), flat).expect("length checked");
        let ng = self.needs(a.0);
        Ok(self.push(value, ng, Op::Reshape(a.0)))
    }

    /// Concatenates two rank-2 tensors along axis 1.
    pub fn concat2(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[0] != bv.shape()[0] {
            return Err(NeuralError::shape(format!(
                "concat2: {:?} | {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let value = ndarray::concatenate(
            Axis(1),
            &[
                av.view().into_dimensionality::<Ix2>().expect("checked"),
                bv.view().into_dimensionality::<Ix2>().expect("checked"),
            ],
        )
        .expect("shapes checked")
        .into_dyn();
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, ng, Op::Concat2(a.0, b.0)))
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let value = ArrayD::from_elem(IxDyn(&[1]), s);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_f64(self.nodes[a.0].value.len() as f64);
        let s = self.nodes[a.0].value.sum() / n;
        let value = ArrayD::from_elem(IxDyn(&[1]), s);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::MeanAll(a.0))
    }

    /// Sums all trailing axes: (B, rest...) -> (B,).
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.ndim() < 2 {
            return Err(NeuralError::shape(format!("sum_rows needs rank >= 2, got {:?}", av.shape())));
        }
        let b = av.shape()[0];
        let row_len = av.len() / b;
        let flat = av.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(b);
        for r in 0..b {
            let mut acc = T::zero();
            for &v in &flat[r * row_len..(r + 1) * row_len] {
                acc += v;
            }
            out.push(acc);
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[b]), out).expect("shape");
        let ng = self.needs(a.0);
        Ok(self.push(value, ng, Op::SumRows(a.0)))
    }

    /// (B, K, D): subtracts each sample's mean over axis 1.
    pub fn center_rows(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.ndim() != 3 {
            return Err(NeuralError::shape(format!(
                "center_rows needs (B, K, D), got {:?}",
                av.shape()
            )));
        }
        let value = center_over_axis1(av);
        let ng = self.needs(a.0);
        Ok(self.push(value, ng, Op::CenterRows(a.0)))
    }

    // ── Layers ───────────────────────────────────────────────────────

    /// 2-D convolution, NCHW, square kernel, symmetric zero padding
    /// `(k-1)/2`; spatial size maps to `ceil(in/stride)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let bv = &self.nodes[bias.0].value;
        if x.ndim() != 4 || w.ndim() != 4 {
            return Err(NeuralError::shape(format!(
                "conv2d: input {:?}, weight {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (bsz, c_in, h, wd) = dims4(x.shape());
        let (c_out, wc_in, kh, kw) = dims4(w.shape());
        if kh != kw || kh % 2 == 0 {
            return Err(NeuralError::InvalidArgument(format!(
                "conv2d kernel must be square and odd, got {kh}x{kw}"
            )));
        }
        if wc_in != c_in {
            return Err(NeuralError::shape(format!(
                "conv2d: input has {c_in} channels, weight expects {wc_in}"
            )));
        }
        if bv.ndim() != 1 || bv.shape()[0] != c_out {
            return Err(NeuralError::shape(format!(
                "conv2d: bias {:?} for {c_out} output channels",
                bv.shape()
            )));
        }
        if stride == 0 {
            return Err(NeuralError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let pad = (kh - 1) / 2;
        let oh = out_size(h, kh, stride, pad);
        let ow = out_size(wd, kw, stride, pad);

        let col = im2col(x, kh, stride, pad, oh, ow);
        let wmat = w
            .view()
            .into_shape_with_order(IxDyn(&[c_out, c_in * kh * kw]))
            .expect("weight is standard layout")
            .into_dimensionality::<Ix2>()
            .expect("rank 2");
        let out_mat = col.dot(&wmat.t()); // (B*OH*OW, C_out)

        let mut value = ArrayD::zeros(IxDyn(&[bsz, c_out, oh, ow]));
        {
            let out_slice = value.as_slice_mut().expect("standard layout");
            let mat_slice = out_mat.as_slice().expect("standard layout");
            let bias_slice = bv.as_slice().expect("standard layout");
            for b in 0..bsz {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let r = (b * oh + oy) * ow + ox;
                        for oc in 0..c_out {
                            out_slice[((b * c_out + oc) * oh + oy) * ow + ox] =
                                mat_slice[r * c_out + oc] + bias_slice[oc];
                        }
                    }
                }
            }
        }
        let ng = self.needs(input.0) || self.needs(weight.0) || self.needs(bias.0);
        Ok(self.push(value, ng, Op::Conv2d { input: input.0, weight: weight.0, bias: bias.0, stride, pad }))
    }

    /// Batch normalization over all axes except the channel axis (1).
    /// In train mode the batch statistics are returned so the caller can
    /// maintain running estimates; in eval mode the caller supplies them.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let x = &self.nodes[input.0].value;
        if x.ndim() != 2 && x.ndim() != 4 {
            return Err(NeuralError::shape(format!(
                "batch_norm needs (B, C) or (B, C, H, W), got {:?}",
                x.shape()
            )));
        }
        let channels = x.shape()[1];
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        if gv.len() != channels || bv.len() != channels {
            return Err(NeuralError::shape(format!(
                "batch_norm affine parameters must have {channels} entries"
            )));
        }

        match running {
            None => {
                // Batch statistics (biased variance).
                let count = T::from_f64((x.len() / channels) as f64);
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                per_channel_sum(x, &mut mean);
                for m in &mut mean {
                    *m = *m / count;
                }
                per_channel_sq_dev(x, &mean, &mut var);
                for v in &mut var {
                    *v = *v / count;
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let value = bn_forward(x, &mean, &inv_std, gv, bv);
                let ng = self.needs(input.0) || self.needs(gamma.0) || self.needs(beta.0);
                let var_out = var.clone();
                let v = self.push(
                    value,
                    ng,
                    Op::BatchNormTrain {
                        input: input.0,
                        gamma: gamma.0,
                        beta: beta.0,
                        mean: mean.clone(),
                        inv_std,
                    },
                );
                Ok((v, Some((mean, var_out))))
            }
            Some((rmean, rvar)) => {
                if rmean.len() != channels || rvar.len() != channels {
                    return Err(NeuralError::shape(
                        "running statistics length must match channels".to_string(),
                    ));
                }
                let inv_std: Vec<T> =
                    rvar.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let value = bn_forward(x, rmean, &inv_std, gv, bv);
                let ng = self.needs(input.0) || self.needs(gamma.0) || self.needs(beta.0);
                let v = self.push(
                    value,
                    ng,
                    Op::BatchNormEval {
                        input: input.0,
                        gamma: gamma.0,
                        beta: beta.0,
                        mean: rmean.to_vec(),
                        inv_std,
                    },
                );
                Ok((v, None))
            }
        }
    }

    /// Layer normalization of each row of a (B, F) tensor.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        if x.ndim() != 2 {
            return Err(NeuralError::shape(format!(
                "layer_norm needs (B, F), got {:?}",
                x.shape()
            )));
        }
        let (bsz, f) = (x.shape()[0], x.shape()[1]);
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        if gv.len() != f || bv.len() != f {
            return Err(NeuralError::shape(format!(
                "layer_norm affine parameters must have {f} entries"
            )));
        }
        let count = T::from_f64(f as f64);
        let xs = x.as_slice().expect("standard layout");
        let gs = gv.as_slice().expect("standard layout");
        let bs = bv.as_slice().expect("standard layout");
        let mut mean = Vec::with_capacity(bsz);
        let mut inv_std = Vec::with_capacity(bsz);
        let mut out = vec![T::zero(); bsz * f];
        for r in 0..bsz {
            let row = &xs[r * f..(r + 1) * f];
            let mut m = T::zero();
            for &v in row {
                m += v;
            }
            m = m / count;
            let mut var = T::zero();
            for &v in row {
                let d = v - m;
                var += d * d;
            }
            var = var / count;
            let is = T::one() / (var + eps).sqrt();
            for (c, &v) in row.iter().enumerate() {
                out[r * f + c] = gs[c] * ((v - m) * is) + bs[c];
            }
            mean.push(m);
            inv_std.push(is);
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[bsz, f]), out).expect("shape");
        let ng = self.needs(input.0) || self.needs(gamma.0) || self.needs(beta.0);
        Ok(self.push(
            value,
            ng,
            Op::LayerNorm { input: input.0, gamma: gamma.0, beta: beta.0, mean, inv_std },
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Each recorded node is visited
    /// exactly once, in reverse topological (insertion) order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(NeuralError::Usage(
                "backward already ran on this graph; rebuild the forward pass first".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NeuralError::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(NeuralError::Usage(
                "backward on a detached tensor: no trainable leaf feeds it".into(),
            ));
        }
        self.backward_done = true;
        let seed = ArrayD::from_elem(self.nodes[loss.0].value.raw_dim(), T::one());
        self.nodes[loss.0].grad = Some(seed);

        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let grad = self.nodes[id].grad.take().expect("checked above");
            let op = self.nodes[id].op.clone();
            self.dispatch(&op, id, &grad);
            self.nodes[id].grad = Some(grad);
        }
        Ok(())
    }

    fn accum(&mut self, id: usize, g: ArrayD<T>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut self.nodes[id].grad {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn dispatch(&mut self, op: &Op<T>, id: usize, grad: &ArrayD<T>) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(a) {
                    self.accum(a, grad.clone());
                }
                if self.needs(b) {
                    self.accum(b, grad.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    self.accum(a, grad.clone());
                }
                if self.needs(b) {
                    self.accum(b, grad.mapv(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let g = grad * &self.nodes[b].value;
                    self.accum(a, g);
                }
                if self.needs(b) {
                    let g = grad * &self.nodes[a].value;
                    self.accum(b, g);
                }
            }
            Op::MulScalar(a, s) => {
                if self.needs(a) {
                    self.accum(a, grad.mapv(|v| v * s));
                }
            }
            Op::Relu(a) => {
                if self.needs(a) {
                    let mask = &self.nodes[a].value;
                    let mut g = grad.clone();
                    g.zip_mut_with(mask, |gv, &xv| {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                    self.accum(a, g);
                }
            }
            Op::Abs(a) => {
                if self.needs(a) {
                    let mut g = grad.clone();
                    g.zip_mut_with(&self.nodes[a].value, |gv, &xv| {
                        *gv = if xv > T::zero() {
                            *gv
                        } else if xv < T::zero() {
                            -*gv
                        } else {
                            T::zero()
                        };
                    });
                    self.accum(a, g);
                }
            }
            Op::Square(a) => {
                if self.needs(a) {
                    let two = T::from_f64(2.0);
                    let mut g = grad.clone();
                    g.zip_mut_with(&self.nodes[a].value, |gv, &xv| *gv = *gv * two * xv);
                    self.accum(a, g);
                }
            }
            Op::Sqrt(a) => {
                if self.needs(a) {
                    let half = T::from_f64(0.5);
                    let mut g = grad.clone();
                    g.zip_mut_with(&self.nodes[id].value, |gv, &yv| {
                        *gv = if yv > T::zero() { *gv * half / yv } else { T::zero() };
                    });
                    self.accum(a, g);
                }
            }
            Op::Matmul(a, b) => {
                let g2 = grad.view().into_dimensionality::<Ix2>().expect("matmul grad rank 2");
                if self.needs(a) {
                    let bv = self.nodes[b]
                        .value
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("rank 2");
                    let da = g2.dot(&bv.t()).into_dyn();
                    self.accum(a, da);
                }
                if self.needs(b) {
                    let av = self.nodes[a]
                        .value
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("rank 2");
                    let db = av.t().dot(&g2).into_dyn();
                    self.accum(b, db);
                }
            }
            Op::AddRowVec(a, b) => {
                if self.needs(a) {
                    self.accum(a, grad.clone());
                }
                if self.needs(b) {
                    let g2 = grad.view().into_dimensionality::<Ix2>().expect("rank 2");
                    let db = g2.sum_axis(Axis(0)).into_dyn();
                    self.accum(b, db);
                }
            }
            Op::Conv2d { input, weight, bias, stride, pad } => {
                self.conv2d_backward(id, input, weight, bias, stride, pad, grad);
            }
            Op::BatchNormTrain { input, gamma, beta, ref mean, ref inv_std } => {
                self.bn_train_backward(input, gamma, beta, mean, inv_std, grad);
            }
            Op::BatchNormEval { input, gamma, beta, ref mean, ref inv_std } => {
                self.bn_eval_backward(input, gamma, beta, mean, inv_std, grad);
            }
            Op::LayerNorm { input, gamma, beta, ref mean, ref inv_std } => {
                self.ln_backward(input, gamma, beta, mean, inv_std, grad);
            }
            Op::Reshape(a) => {
                if self.needs(a) {
                    let shape = self.nodes[a].value.raw_dim();
                    let flat: Vec<T> = grad.iter().copied().collect();
                    self.accum(a, ArrayD::from_shape_vec(shape, flat).expect("same length"));
                }
            }
            Op::Concat2(a, b) => {
                let na = self.nodes[a].value.shape()[1];
                let g2 = grad.view().into_dimensionality::<Ix2>().expect("rank 2");
                if self.needs(a) {
                    let da = g2.slice(ndarray::s![.., ..na]).to_owned().into_dyn();
                    self.accum(a, da);
                }
                if self.needs(b) {
                    let db = g2.slice(ndarray::s![.., na..]).to_owned().into_dyn();
                    self.accum(b, db);
                }
            }
            Op::SumAll(a) => {
                if self.needs(a) {
                    let g0 = *grad.iter().next().expect("scalar");
                    self.accum(a, ArrayD::from_elem(self.nodes[a].value.raw_dim(), g0));
                }
            }
            Op::MeanAll(a) => {
                if self.needs(a) {
                    let n = T::from_f64(self.nodes[a].value.len() as f64);
                    let g0 = *grad.iter().next().expect("scalar") / n;
                    self.accum(a, ArrayD::from_elem(self.nodes[a].value.raw_dim(), g0));
                }
            }
            Op::SumRows(a) => {
                if self.needs(a) {
                    let shape = self.nodes[a].value.raw_dim();
                    let b = shape[0];
                    let row_len = shape.size() / b;
                    let gs = grad.as_slice().expect("standard layout");
                    let mut out = vec![T::zero(); shape.size()];
                    for r in 0..b {
                        for c in 0..row_len {
                            out[r * row_len + c] = gs[r];
                        }
                    }
                    self.accum(a, ArrayD::from_shape_vec(shape, out).expect("shape"));
                }
            }
            Op::CenterRows(a) => {
                if self.needs(a) {
                    // Centering is a symmetric idempotent projection, so
                    // the backward map is the same centering.
                    self.accum(a, center_over_axis1(grad));
                }
            }
        }
    }

    fn conv2d_backward(
        &mut self,
        out_id: usize,
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
        grad: &ArrayD<T>,
    ) {
        let (bsz, c_out, oh, ow) = dims4(self.nodes[out_id].value.shape());
        let (_, c_in, kh, kw) = dims4(self.nodes[weight].value.shape());
        let x_shape: Vec<usize> = self.nodes[input].value.shape().to_vec();

        // dOut as a (B*OH*OW, C_out) matrix.
        let mut dout_mat = ndarray::Array2::<T>::zeros((bsz * oh * ow, c_out));
        {
            let gs = grad.as_slice().expect("standard layout");
            let dm = dout_mat.as_slice_mut().expect("standard layout");
            for b in 0..bsz {
                for oc in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dm[((b * oh + oy) * ow + ox) * c_out + oc] =
                                gs[((b * c_out + oc) * oh + oy) * ow + ox];
                        }
                    }
                }
            }
        }

        if self.needs(bias) {
            let db = dout_mat.sum_axis(Axis(0)).into_dyn();
            self.accum(bias, db);
        }

        let needs_w = self.needs(weight);
        let needs_x = self.needs(input);
        if !needs_w && !needs_x {
            return;
        }

        if needs_w {
            // dW = dOut^T . col, with col rebuilt from the stored input.
            let col = im2col(&self.nodes[input].value, kh, stride, pad, oh, ow);
            let dw_mat = dout_mat.t().dot(&col);
            let dw = dw_mat
                .into_shape_with_order(IxDyn(&[c_out, c_in, kh, kw]))
                .expect("standard layout");
            self.accum(weight, dw);
        }

        if needs_x {
            let wmat = self.nodes[weight]
                .value
                .view()
                .into_shape_with_order(IxDyn(&[c_out, c_in * kh * kw]))
                .expect("standard layout")
                .into_dimensionality::<Ix2>()
                .expect("rank 2");
            let dcol = dout_mat.dot(&wmat); // (B*OH*OW, C_in*KH*KW)
            let dx = col2im(&dcol, &x_shape, kh, stride, pad, oh, ow);
            self.accum(input, dx);
        }
    }

    fn bn_train_backward(
        &mut self,
        input: usize,
        gamma: usize,
        beta: usize,
        mean: &[T],
        inv_std: &[T],
        grad: &ArrayD<T>,
    ) {
        let needs_input = self.needs(input);
        let needs_gamma = self.needs(gamma);
        let needs_beta = self.needs(beta);
        let channels = self.nodes[input].value.shape()[1];

        let (sum_dy, sum_dy_xhat, dx) = {
            let x = &self.nodes[input].value;
            let count = T::from_f64((x.len() / channels) as f64);
            let gs = self.nodes[gamma].value.as_slice().expect("layout");
            let gsl = grad.as_slice().expect("layout");
            let xsl = x.as_slice().expect("layout");

            let mut sum_dy = vec![T::zero(); channels];
            let mut sum_dy_xhat = vec![T::zero(); channels];
            for_each_channel_idx(x.shape(), |c, idx| {
                let xhat = (xsl[idx] - mean[c]) * inv_std[c];
                sum_dy[c] += gsl[idx];
                sum_dy_xhat[c] += gsl[idx] * xhat;
            });

            let dx = if needs_input {
                let mut dx = ArrayD::zeros(x.raw_dim());
                {
                    let dxs = dx.as_slice_mut().expect("layout");
                    for_each_channel_idx(x.shape(), |c, idx| {
                        let xhat = (xsl[idx] - mean[c]) * inv_std[c];
                        let term = count * gsl[idx] - sum_dy[c] - xhat * sum_dy_xhat[c];
                        dxs[idx] = gs[c] * inv_std[c] / count * term;
                    });
                }
                Some(dx)
            } else {
                None
            };
            (sum_dy, sum_dy_xhat, dx)
        };

        if needs_gamma {
            self.accum(gamma, ArrayD::from_shape_vec(IxDyn(&[channels]), sum_dy_xhat).expect("shape"));
        }
        if needs_beta {
            self.accum(beta, ArrayD::from_shape_vec(IxDyn(&[channels]), sum_dy).expect("shape"));
        }
        if let Some(dx) = dx {
            self.accum(input, dx);
        }
    }

    fn bn_eval_backward(
        &mut self,
        input: usize,
        gamma: usize,
        beta: usize,
        mean: &[T],
        inv_std: &[T],
        grad: &ArrayD<T>,
    ) {
        let needs_input = self.needs(input);
        let channels = self.nodes[input].value.shape()[1];
        let (sum_dy, sum_dy_xhat, dx) = {
            let x = &self.nodes[input].value;
            let gs = self.nodes[gamma].value.as_slice().expect("layout");
            let gsl = grad.as_slice().expect("layout");
            let xsl = x.as_slice().expect("layout");
            let mut sum_dy = vec![T::zero(); channels];
            let mut sum_dy_xhat = vec![T::zero(); channels];
            for_each_channel_idx(x.shape(), |c, idx| {
                sum_dy[c] += gsl[idx];
                sum_dy_xhat[c] += gsl[idx] * (xsl[idx] - mean[c]) * inv_std[c];
            });
            let dx = if needs_input {
                let mut dx = ArrayD::zeros(x.raw_dim());
                {
                    let dxs = dx.as_slice_mut().expect("layout");
                    for_each_channel_idx(x.shape(), |c, idx| {
                        dxs[idx] = gsl[idx] * gs[c] * inv_std[c];
                    });
                }
                Some(dx)
            } else {
                None
            };
            (sum_dy, sum_dy_xhat, dx)
        };
        if self.needs(gamma) {
            self.accum(gamma, ArrayD::from_shape_vec(IxDyn(&[channels]), sum_dy_xhat).expect("shape"));
        }
        if self.needs(beta) {
            self.accum(beta, ArrayD::from_shape_vec(IxDyn(&[channels]), sum_dy).expect("shape"));
        }
        if let Some(dx) = dx {
            self.accum(input, dx);
        }
    }

    fn ln_backward(
        &mut self,
        input: usize,
        gamma: usize,
        beta: usize,
        mean: &[T],
        inv_std: &[T],
        grad: &ArrayD<T>,
    ) {
        let x = &self.nodes[input].value;
        let (bsz, f) = (x.shape()[0], x.shape()[1]);
        let count = T::from_f64(f as f64);
        let xs = x.as_slice().expect("layout");
        let gsl = grad.as_slice().expect("layout");
        let gs = self.nodes[gamma].value.as_slice().expect("layout").to_vec();

        let mut dgamma = vec![T::zero(); f];
        let mut dbeta = vec![T::zero(); f];
        let mut dx = vec![T::zero(); bsz * f];
        for r in 0..bsz {
            let mut sum_dyg = T::zero();
            let mut sum_dyg_xhat = T::zero();
            for c in 0..f {
                let idx = r * f + c;
                let xhat = (xs[idx] - mean[r]) * inv_std[r];
                let dyg = gsl[idx] * gs[c];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * xhat;
                dgamma[c] += gsl[idx] * xhat;
                dbeta[c] += gsl[idx];
            }
            for c in 0..f {
                let idx = r * f + c;
                let xhat = (xs[idx] - mean[r]) * inv_std[r];
                let dyg = gsl[idx] * gs[c];
                dx[idx] = inv_std[r] / count * (count * dyg - sum_dyg - xhat * sum_dyg_xhat);
            }
        }
        if self.needs(gamma) {
            self.accum(gamma, ArrayD::from_shape_vec(IxDyn(&[f]), dgamma).expect("shape"));
        }
        if self.needs(beta) {
            self.accum(beta, ArrayD::from_shape_vec(IxDyn(&[f]), dbeta).expect("shape"));
        }
        if self.needs(input) {
            self.accum(input, ArrayD::from_shape_vec(IxDyn(&[bsz, f]), dx).expect("shape"));
        }
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

/// Output spatial size for kernel k, stride s, padding p.
fn out_size(input: usize, k: usize, s: usize, p: usize) -> usize {
    (input + 2 * p - k) / s + 1
}

/// Lowers (B, C, H, W) to a (B*OH*OW, C*KH*KW) patch matrix.
fn im2col<T: Real>(
    x: &ArrayD<T>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array2<T> {
    let (bsz, c_in, h, w) = dims4(x.shape());
    let q = c_in * k * k;
    let mut col = ndarray::Array2::<T>::zeros((bsz * oh * ow, q));
    let xs = x.as_slice().expect("standard layout");
    let cs = col.as_slice_mut().expect("standard layout");
    for b in 0..bsz {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let r = (b * oh + oy) * ow + ox;
                let row = &mut cs[r * q..(r + 1) * q];
                for c in 0..c_in {
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        let dst = (c * k + ky) * k;
                        if iy < 0 || iy >= h as isize {
                            continue; // zero padding
                        }
                        let src_base = ((b * c_in + c) * h + iy as usize) * w;
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            row[dst + kx] = xs[src_base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a patch-matrix gradient back to input layout.
fn col2im<T: Real>(
    dcol: &ndarray::Array2<T>,
    x_shape: &[usize],
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ArrayD<T> {
    let (bsz, c_in, h, w) = dims4(x_shape);
    let q = c_in * k * k;
    let mut dx = ArrayD::zeros(IxDyn(x_shape));
    let ds = dx.as_slice_mut().expect("standard layout");
    let cs = dcol.as_slice().expect("standard layout");
    for b in 0..bsz {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let r = (b * oh + oy) * ow + ox;
                let row = &cs[r * q..(r + 1) * q];
                for c in 0..c_in {
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = (c * k + ky) * k;
                        let dst_base = ((b * c_in + c) * h + iy as usize) * w;
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            ds[dst_base + ix as usize] += row[src + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// y = gamma * (x - mean) * inv_std + beta, broadcast per channel.
fn bn_forward<T: Real>(
    x: &ArrayD<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &ArrayD<T>,
    beta: &ArrayD<T>,
) -> ArrayD<T> {
    let gs = gamma.as_slice().expect("layout");
    let bs = beta.as_slice().expect("layout");
    let mut out = ArrayD::zeros(x.raw_dim());
    {
        let os = out.as_slice_mut().expect("layout");
        let xs = x.as_slice().expect("layout");
        for_each_channel_idx(x.shape(), |c, idx| {
            os[idx] = gs[c] * ((xs[idx] - mean[c]) * inv_std[c]) + bs[c];
        });
    }
    out
}

fn per_channel_sum<T: Real>(x: &ArrayD<T>, out: &mut [T]) {
    let xs = x.as_slice().expect("layout");
    for_each_channel_idx(x.shape(), |c, idx| out[c] += xs[idx]);
}

fn per_channel_sq_dev<T: Real>(x: &ArrayD<T>, mean: &[T], out: &mut [T]) {
    let xs = x.as_slice().expect("layout");
    for_each_channel_idx(x.shape(), |c, idx| {
        let d = xs[idx] - mean[c];
        out[c] += d * d;
    });
}

/// Visits every flat index of a (B, C) or (B, C, H, W) tensor with its
/// channel, in memory order.
fn for_each_channel_idx(shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let b = shape[0];
    let c = shape[1];
    let spatial: usize = shape[2..].iter().product::<usize>().max(1);
    let mut idx = 0;
    for _ in 0..b {
        for ch in 0..c {
            for _ in 0..spatial {
                f(ch, idx);
                idx += 1;
            }
        }
    }
}

/// (B, K, D) minus its mean over axis 1, computed densely.
fn center_over_axis1<T: Real>(x: &ArrayD<T>) -> ArrayD<T> {
    let (b, k, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let count = T::from_f64(k as f64);
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); b * k * d];
    for bi in 0..b {
        for di in 0..d {
            let mut m = T::zero();
            for ki in 0..k {
                m += xs[(bi * k + ki) * d + di];
            }
            m = m / count;
            for ki in 0..k {
                let idx = (bi * k + ki) * d + di;
                out[idx] = xs[idx] - m;
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[b, k, d]), out).expect("shape")
}

/// Convenience: 4-d view of a dynamic array.
pub fn as4<T: Real>(x: &ArrayD<T>) -> ndarray::ArrayView4<'_, T> {
    x.view().into_dimensionality::<Ix4>().expect("rank 4")
}
