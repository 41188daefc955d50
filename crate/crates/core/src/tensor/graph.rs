//! Wengert-tape computation graph: ops are recorded during the forward pass
//! and replayed in reverse for gradients.
//!
//! Conventions: time-major row-major layout. A `[T, C]` tensor stores frame
//! `t` contiguously; conv kernels are `[K, C_in, C_out]` so the innermost
//! loop runs over the contiguous output-channel axis and vectorizes.
//!
//! After [`Graph::backward`] only leaf gradients are retained; interior
//! gradients are dropped as soon as they have been propagated.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: usize, kernel: usize, bias: usize, stride: usize, dilation: usize },
    AvgPool1d { input: usize, kernel: usize, stride: usize },
    Linear { input: usize, weight: usize, bias: usize },
    Matmul { lhs: usize, rhs: usize },
    Dot { lhs: usize, rhs: usize },
    Add { lhs: usize, rhs: usize },
    Mul { lhs: usize, rhs: usize },
    Scale { input: usize, factor: f64 },
    ConcatLast { inputs: Vec<usize> },
    ConcatRows { inputs: Vec<usize> },
    StackRows { inputs: Vec<usize> },
    Row { input: usize, index: usize },
    Transpose2d { input: usize },
    Reshape { input: usize },
    Prelu { input: usize, alpha: usize },
    Sigmoid { input: usize },
    LogSigmoid { input: usize },
    SoftmaxLast { input: usize },
    LayerNorm { input: usize, gain: usize, bias: usize, eps: f64 },
    ReduceMean { input: usize, axis: usize },
    SumAll { input: usize },
    MeanAll { input: usize },
    SelectClass { input: usize, labels: Vec<usize> },
    LogClamped { input: usize, min: f64 },
}

struct Node<E> {
    shape: Vec<usize>,
    values: Vec<E>,
    op: Op,
}

pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<E>, op: Op) -> TensorRef {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { shape, values, op });
        self.grads.push(None);
        TensorRef(self.nodes.len() - 1)
    }

    /// Register a constant/input leaf.
    pub fn input(&mut self, tensor: Tensor<E>) -> TensorRef {
        let Tensor { shape, data } = tensor;
        self.push(shape, data, Op::Leaf)
    }

    pub fn shape(&self, r: TensorRef) -> &[usize] {
        &self.nodes[r.0].shape
    }

    pub fn values(&self, r: TensorRef) -> &[E] {
        &self.nodes[r.0].values
    }

    pub fn scalar_value(&self, r: TensorRef) -> E {
        debug_assert_eq!(self.nodes[r.0].values.len(), 1);
        self.nodes[r.0].values[0]
    }

    pub fn tensor(&self, r: TensorRef) -> Tensor<E> {
        Tensor::new(self.nodes[r.0].shape.clone(), self.nodes[r.0].values.clone()).unwrap()
    }

    /// Gradient of the last `backward` target w.r.t. a leaf. `None` if the
    /// leaf was unreachable or `backward` has not run.
    pub fn grad(&self, r: TensorRef) -> Option<&[E]> {
        self.grads[r.0].as_deref()
    }

    fn numel(&self, r: TensorRef) -> usize {
        self.nodes[r.0].values.len()
    }

    // ── op constructors ─────────────────────────────────────────────

    /// Dilated 1-D cross-correlation with "same"-style symmetric zero
    /// padding of total size (K-1)*dilation, so `T_out = ceil(T_in/stride)`.
    /// input `[T, C_in]`, kernel `[K, C_in, C_out]`, bias `[C_out]`.
    pub fn conv1d(
        &mut self,
        input: TensorRef,
        kernel: TensorRef,
        bias: TensorRef,
        stride: usize,
        dilation: usize,
    ) -> Result<TensorRef> {
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernel).to_vec();
        let bshape = self.shape(bias).to_vec();
        if ishape.len() != 2 || kshape.len() != 3 || bshape.len() != 1 {
            return Err(Error::invalid(format!(
                "conv1d ranks: input {ishape:?} kernel {kshape:?} bias {bshape:?}"
            )));
        }
        if stride == 0 || dilation == 0 || kshape[0] == 0 {
            return Err(Error::invalid(format!(
                "conv1d requires kernel/stride/dilation >= 1, got K={} stride={stride} dilation={dilation}",
                kshape[0]
            )));
        }
        if ishape[1] != kshape[1] || bshape[0] != kshape[2] {
            return Err(Error::invalid(format!(
                "conv1d channels: input {ishape:?} kernel {kshape:?} bias {bshape:?}"
            )));
        }
        let (t_in, c_in) = (ishape[0], ishape[1]);
        let (k, c_out) = (kshape[0], kshape[2]);
        let t_out = div_ceil(t_in, stride);
        let mut out = vec![E::ZERO; t_out * c_out];
        conv1d_forward(
            &self.nodes[input.0].values,
            &self.nodes[kernel.0].values,
            &self.nodes[bias.0].values,
            &mut out,
            t_in,
            c_in,
            c_out,
            k,
            stride,
            dilation,
        );
        Ok(self.push(
            vec![t_out, c_out],
            out,
            Op::Conv1d { input: input.0, kernel: kernel.0, bias: bias.0, stride, dilation },
        ))
    }

    /// Mean over `kernel` taps with symmetric zero padding; out-of-range taps
    /// contribute zero and the divisor stays at `kernel`.
    pub fn avg_pool1d(&mut self, input: TensorRef, kernel: usize, stride: usize) -> Result<TensorRef> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 2 {
            return Err(Error::invalid(format!("avg_pool1d expects rank-2 input, got {ishape:?}")));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "avg_pool1d requires kernel/stride >= 1, got kernel={kernel} stride={stride}"
            )));
        }
        let (t_in, c) = (ishape[0], ishape[1]);
        let t_out = div_ceil(t_in, stride);
        let pad_left = (kernel - 1) / 2;
        let inv_k = E::from_f64(1.0 / kernel as f64);
        let x = &self.nodes[input.0].values;
        let mut out = vec![E::ZERO; t_out * c];
        for o in 0..t_out {
            let row = &mut out[o * c..(o + 1) * c];
            for tap in 0..kernel {
                let t = (o * stride + tap) as isize - pad_left as isize;
                if t >= 0 && (t as usize) < t_in {
                    let src = &x[t as usize * c..(t as usize + 1) * c];
                    for (r, s) in row.iter_mut().zip(src) {
                        *r += *s;
                    }
                }
            }
            for r in row.iter_mut() {
                *r = *r * inv_k;
            }
        }
        Ok(self.push(vec![t_out, c], out, Op::AvgPool1d { input: input.0, kernel, stride }))
    }

    /// `input [.., C_in] x weight [C_in, C_out] + bias [C_out]`; input may be
    /// rank 1 or rank 2.
    pub fn linear(&mut self, input: TensorRef, weight: TensorRef, bias: TensorRef) -> Result<TensorRef> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let bshape = self.shape(bias).to_vec();
        let c_in = *ishape.last().ok_or_else(|| Error::invalid("linear on scalar input"))?;
        if wshape.len() != 2 || wshape[0] != c_in || bshape != [wshape[1]] {
            return Err(Error::invalid(format!(
                "linear shapes: input {ishape:?} weight {wshape:?} bias {bshape:?}"
            )));
        }
        let c_out = wshape[1];
        let rows = self.numel(input) / c_in;
        let x = &self.nodes[input.0].values;
        let w = &self.nodes[weight.0].values;
        let b = &self.nodes[bias.0].values;
        let mut out = vec![E::ZERO; rows * c_out];
        matmul_bias(x, w, Some(b), &mut out, rows, c_in, c_out);
        let mut oshape = ishape;
        *oshape.last_mut().unwrap() = c_out;
        Ok(self.push(oshape, out, Op::Linear { input: input.0, weight: weight.0, bias: bias.0 }))
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, lhs: TensorRef, rhs: TensorRef) -> Result<TensorRef> {
        let lshape = self.shape(lhs).to_vec();
        let rshape = self.shape(rhs).to_vec();
        if lshape.len() != 2 || rshape.len() != 2 || lshape[1] != rshape[0] {
            return Err(Error::invalid(format!("matmul shapes: {lshape:?} x {rshape:?}")));
        }
        let (m, k, n) = (lshape[0], lshape[1], rshape[1]);
        let mut out = vec![E::ZERO; m * n];
        matmul_bias(
            &self.nodes[lhs.0].values,
            &self.nodes[rhs.0].values,
            None,
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(vec![m, n], out, Op::Matmul { lhs: lhs.0, rhs: rhs.0 }))
    }

    pub fn dot(&mut self, lhs: TensorRef, rhs: TensorRef) -> Result<TensorRef> {
        let lshape = self.shape(lhs);
        let rshape = self.shape(rhs);
        if lshape.len() != 1 || rshape != lshape {
            return Err(Error::invalid(format!("dot shapes: {lshape:?} . {rshape:?}")));
        }
        let mut acc = E::ZERO;
        for (a, b) in self.nodes[lhs.0].values.iter().zip(&self.nodes[rhs.0].values) {
            acc += *a * *b;
        }
        Ok(self.push(vec![], vec![acc], Op::Dot { lhs: lhs.0, rhs: rhs.0 }))
    }

    pub fn add(&mut self, lhs: TensorRef, rhs: TensorRef) -> Result<TensorRef> {
        if self.shape(lhs) != self.shape(rhs) {
            return Err(Error::invalid(format!(
                "add shapes: {:?} + {:?}",
                self.shape(lhs),
                self.shape(rhs)
            )));
        }
        let out: Vec<E> = self.nodes[lhs.0]
            .values
            .iter()
            .zip(&self.nodes[rhs.0].values)
            .map(|(a, b)| *a + *b)
            .collect();
        Ok(self.push(self.nodes[lhs.0].shape.clone(), out, Op::Add { lhs: lhs.0, rhs: rhs.0 }))
    }

    pub fn mul(&mut self, lhs: TensorRef, rhs: TensorRef) -> Result<TensorRef> {
        if self.shape(lhs) != self.shape(rhs) {
            return Err(Error::invalid(format!(
                "mul shapes: {:?} * {:?}",
                self.shape(lhs),
                self.shape(rhs)
            )));
        }
        let out: Vec<E> = self.nodes[lhs.0]
            .values
            .iter()
            .zip(&self.nodes[rhs.0].values)
            .map(|(a, b)| *a * *b)
            .collect();
        Ok(self.push(self.nodes[lhs.0].shape.clone(), out, Op::Mul { lhs: lhs.0, rhs: rhs.0 }))
    }

    pub fn scale(&mut self, input: TensorRef, factor: f64) -> TensorRef {
        let f = E::from_f64(factor);
        let out: Vec<E> = self.nodes[input.0].values.iter().map(|v| *v * f).collect();
        self.push(self.nodes[input.0].shape.clone(), out, Op::Scale { input: input.0, factor })
    }

    /// Concatenate along the last axis. Rank-1 inputs concatenate plainly;
    /// rank-2 inputs must share the leading dimension.
    pub fn concat_last(&mut self, inputs: &[TensorRef]) -> Result<TensorRef> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat_last of zero tensors"));
        }
        let rank = self.shape(inputs[0]).len();
        if rank == 0 || rank > 2 {
            return Err(Error::invalid(format!("concat_last rank {rank}")));
        }
        let rows = if rank == 2 { self.shape(inputs[0])[0] } else { 1 };
        let mut widths = Vec::with_capacity(inputs.len());
        for r in inputs {
            let s = self.shape(*r);
            if s.len() != rank || (rank == 2 && s[0] != rows) {
                return Err(Error::invalid(format!(
                    "concat_last mismatched shapes: {:?} vs {s:?}",
                    self.shape(inputs[0])
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![E::ZERO; rows * total];
        let mut col = 0;
        for (r, w) in inputs.iter().zip(&widths) {
            let src = &self.nodes[r.0].values;
            for row in 0..rows {
                out[row * total + col..row * total + col + w]
                    .copy_from_slice(&src[row * w..(row + 1) * w]);
            }
            col += w;
        }
        let oshape = if rank == 2 { vec![rows, total] } else { vec![total] };
        Ok(self.push(oshape, out, Op::ConcatLast { inputs: inputs.iter().map(|r| r.0).collect() }))
    }

    /// Concatenate rank-2 tensors along the row (time) axis.
    pub fn concat_rows(&mut self, inputs: &[TensorRef]) -> Result<TensorRef> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat_rows of zero tensors"));
        }
        let cols = match self.shape(inputs[0]) {
            [_, c] => *c,
            s => return Err(Error::invalid(format!("concat_rows expects rank-2, got {s:?}"))),
        };
        let mut total_rows = 0;
        for r in inputs {
            match self.shape(*r) {
                [t, c] if *c == cols => total_rows += t,
                s => return Err(Error::invalid(format!("concat_rows column mismatch: {s:?}"))),
            }
        }
        let mut out = Vec::with_capacity(total_rows * cols);
        for r in inputs {
            out.extend_from_slice(&self.nodes[r.0].values);
        }
        Ok(self.push(
            vec![total_rows, cols],
            out,
            Op::ConcatRows { inputs: inputs.iter().map(|r| r.0).collect() },
        ))
    }

    /// Stack rank-1 tensors of equal length into a `[N, len]` matrix.
    pub fn stack_rows(&mut self, inputs: &[TensorRef]) -> Result<TensorRef> {
        if inputs.is_empty() {
            return Err(Error::invalid("stack_rows of zero tensors"));
        }
        let len = match self.shape(inputs[0]) {
            [n] => *n,
            s => return Err(Error::invalid(format!("stack_rows expects rank-1, got {s:?}"))),
        };
        for r in inputs {
            if self.shape(*r) != [len] {
                return Err(Error::invalid(format!(
                    "stack_rows length mismatch: [{len}] vs {:?}",
                    self.shape(*r)
                )));
            }
        }
        let mut out = Vec::with_capacity(inputs.len() * len);
        for r in inputs {
            out.extend_from_slice(&self.nodes[r.0].values);
        }
        Ok(self.push(
            vec![inputs.len(), len],
            out,
            Op::StackRows { inputs: inputs.iter().map(|r| r.0).collect() },
        ))
    }

    /// Extract row `index` of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&mut self, input: TensorRef, index: usize) -> Result<TensorRef> {
        let (t, c) = match self.shape(input) {
            [t, c] => (*t, *c),
            s => return Err(Error::invalid(format!("row() expects rank-2, got {s:?}"))),
        };
        if index >= t {
            return Err(Error::invalid(format!("row index {index} out of range for {t} rows")));
        }
        let out = self.nodes[input.0].values[index * c..(index + 1) * c].to_vec();
        Ok(self.push(vec![c], out, Op::Row { input: input.0, index }))
    }

    pub fn transpose2d(&mut self, input: TensorRef) -> Result<TensorRef> {
        let (rows, cols) = match self.shape(input) {
            [r, c] => (*r, *c),
            s => return Err(Error::invalid(format!("transpose2d expects rank-2, got {s:?}"))),
        };
        let x = &self.nodes[input.0].values;
        let mut out = vec![E::ZERO; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        Ok(self.push(vec![cols, rows], out, Op::Transpose2d { input: input.0 }))
    }

    pub fn reshape(&mut self, input: TensorRef, shape: Vec<usize>) -> Result<TensorRef> {
        if shape.iter().product::<usize>() != self.numel(input) {
            return Err(Error::invalid(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(input)
            )));
        }
        let out = self.nodes[input.0].values.clone();
        Ok(self.push(shape, out, Op::Reshape { input: input.0 }))
    }

    /// PReLU with a learned per-channel slope over the last axis.
    pub fn prelu(&mut self, input: TensorRef, alpha: TensorRef) -> Result<TensorRef> {
        let c = *self
            .shape(input)
            .last()
            .ok_or_else(|| Error::invalid("prelu on scalar input"))?;
        if self.shape(alpha) != [c] {
            return Err(Error::invalid(format!(
                "prelu slope shape {:?} does not match channel count {c}",
                self.shape(alpha)
            )));
        }
        let a = &self.nodes[alpha.0].values;
        let x = &self.nodes[input.0].values;
        let mut out = Vec::with_capacity(x.len());
        for (i, &v) in x.iter().enumerate() {
            out.push(if v > E::ZERO { v } else { a[i % c] * v });
        }
        Ok(self.push(self.nodes[input.0].shape.clone(), out, Op::Prelu { input: input.0, alpha: alpha.0 }))
    }

    pub fn sigmoid(&mut self, input: TensorRef) -> TensorRef {
        let out: Vec<E> = self.nodes[input.0].values.iter().map(|&v| sigmoid_scalar(v)).collect();
        self.push(self.nodes[input.0].shape.clone(), out, Op::Sigmoid { input: input.0 })
    }

    /// Numerically stable log(sigmoid(x)); never -inf/NaN for finite input.
    pub fn log_sigmoid(&mut self, input: TensorRef) -> TensorRef {
        let out: Vec<E> =
            self.nodes[input.0].values.iter().map(|&v| log_sigmoid_scalar(v)).collect();
        self.push(self.nodes[input.0].shape.clone(), out, Op::LogSigmoid { input: input.0 })
    }

    /// Row-stochastic softmax over the last axis.
    pub fn softmax_last(&mut self, input: TensorRef) -> TensorRef {
        let shape = self.nodes[input.0].shape.clone();
        let c = *shape.last().expect("softmax_last on scalar");
        let x = &self.nodes[input.0].values;
        let mut out = vec![E::ZERO; x.len()];
        for (row_in, row_out) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            let mut max = row_in[0];
            for &v in row_in {
                if v > max {
                    max = v;
                }
            }
            let mut sum = E::ZERO;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in row_out.iter_mut() {
                *o = *o / sum;
            }
        }
        self.push(shape, out, Op::SoftmaxLast { input: input.0 })
    }

    /// Layer normalization over the last (channel) axis with learned gain
    /// and bias.
    pub fn layer_norm(
        &mut self,
        input: TensorRef,
        gain: TensorRef,
        bias: TensorRef,
        eps: f64,
    ) -> Result<TensorRef> {
        let c = *self
            .shape(input)
            .last()
            .ok_or_else(|| Error::invalid("layer_norm on scalar input"))?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::invalid(format!(
                "layer_norm gain {:?} / bias {:?} do not match channel count {c}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let x = &self.nodes[input.0].values;
        let g = &self.nodes[gain.0].values;
        let b = &self.nodes[bias.0].values;
        let mut out = vec![E::ZERO; x.len()];
        for (row_in, row_out) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            let (mean, rstd) = row_stats(row_in, eps);
            for i in 0..c {
                row_out[i] = g[i] * ((row_in[i] - mean) * rstd) + b[i];
            }
        }
        Ok(self.push(
            self.nodes[input.0].shape.clone(),
            out,
            Op::LayerNorm { input: input.0, gain: gain.0, bias: bias.0, eps },
        ))
    }

    /// Mean over one axis of a rank-2 tensor.
    pub fn reduce_mean(&mut self, input: TensorRef, axis: usize) -> Result<TensorRef> {
        let (t, c) = match self.shape(input) {
            [t, c] => (*t, *c),
            s => return Err(Error::invalid(format!("reduce_mean expects rank-2, got {s:?}"))),
        };
        if axis > 1 {
            return Err(Error::invalid(format!("reduce_mean axis {axis} out of range")));
        }
        let x = &self.nodes[input.0].values;
        let (len, n) = if axis == 0 { (c, t) } else { (t, c) };
        let inv = E::from_f64(1.0 / n as f64);
        let mut out = vec![E::ZERO; len];
        if axis == 0 {
            for row in x.chunks_exact(c) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += *v;
                }
            }
        } else {
            for (o, row) in out.iter_mut().zip(x.chunks_exact(c)) {
                for v in row {
                    *o += *v;
                }
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        Ok(self.push(vec![len], out, Op::ReduceMean { input: input.0, axis }))
    }

    pub fn sum_all(&mut self, input: TensorRef) -> TensorRef {
        let mut acc = E::ZERO;
        for v in &self.nodes[input.0].values {
            acc += *v;
        }
        self.push(vec![], vec![acc], Op::SumAll { input: input.0 })
    }

    pub fn mean_all(&mut self, input: TensorRef) -> TensorRef {
        let n = self.numel(input);
        let mut acc = E::ZERO;
        for v in &self.nodes[input.0].values {
            acc += *v;
        }
        self.push(
            vec![],
            vec![acc * E::from_f64(1.0 / n as f64)],
            Op::MeanAll { input: input.0 },
        )
    }

    /// `out[t] = input[t, labels[t]]` for a rank-2 input.
    pub fn select_class(&mut self, input: TensorRef, labels: &[usize]) -> Result<TensorRef> {
        let (t, c) = match self.shape(input) {
            [t, c] => (*t, *c),
            s => return Err(Error::invalid(format!("select_class expects rank-2, got {s:?}"))),
        };
        if labels.len() != t {
            return Err(Error::invalid(format!(
                "select_class labels {} != rows {t}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("select_class label {bad} >= classes {c}")));
        }
        let x = &self.nodes[input.0].values;
        let out: Vec<E> = labels.iter().enumerate().map(|(i, &l)| x[i * c + l]).collect();
        Ok(self.push(vec![t], out, Op::SelectClass { input: input.0, labels: labels.to_vec() }))
    }

    /// `ln(max(x, min))`; gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, input: TensorRef, min: f64) -> TensorRef {
        let floor = E::from_f64(min);
        let out: Vec<E> = self.nodes[input.0]
            .values
            .iter()
            .map(|&v| if v > floor { v.ln() } else { floor.ln() })
            .collect();
        self.push(self.nodes[input.0].shape.clone(), out, Op::LogClamped { input: input.0, min })
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a finite scalar loss. Every leaf reachable from
    /// `loss` receives a gradient; unreachable leaves keep `None` (callers
    /// treat that as zero).
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::invalid(format!(
                "backward target must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let loss_value = self.nodes[loss.0].values[0];
        if !loss_value.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                detail: format!("non-finite loss {loss_value:?}"),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![E::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(g_out) = self.grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                // Leaf gradients are the output of the pass; put it back.
                self.grads[i] = Some(g_out);
                continue;
            }
            self.backward_node(i, &g_out);
        }
        Ok(())
    }

    fn accumulate(&mut self, node: usize, contribution: Vec<E>) {
        match &mut self.grads[node] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contribution) {
                    *e += *c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backward_node(&mut self, i: usize, g_out: &[E]) {
        // Ops only reference earlier nodes, so reads of input values and
        // writes of input grads never alias the node being processed.
        match &self.nodes[i].op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            &Op::Conv1d { input, kernel, bias, stride, dilation } => {
                let (t_in, c_in) = (self.nodes[input].shape[0], self.nodes[input].shape[1]);
                let (k, c_out) = (self.nodes[kernel].shape[0], self.nodes[kernel].shape[2]);
                let mut d_in = vec![E::ZERO; t_in * c_in];
                let mut d_k = vec![E::ZERO; k * c_in * c_out];
                let mut d_b = vec![E::ZERO; c_out];
                conv1d_backward(
                    &self.nodes[input].values,
                    &self.nodes[kernel].values,
                    g_out,
                    &mut d_in,
                    &mut d_k,
                    &mut d_b,
                    t_in,
                    c_in,
                    c_out,
                    k,
                    stride,
                    dilation,
                );
                self.accumulate(input, d_in);
                self.accumulate(kernel, d_k);
                self.accumulate(bias, d_b);
            }
            &Op::AvgPool1d { input, kernel, stride } => {
                let (t_in, c) = (self.nodes[input].shape[0], self.nodes[input].shape[1]);
                let t_out = div_ceil(t_in, stride);
                let pad_left = (kernel - 1) / 2;
                let inv_k = E::from_f64(1.0 / kernel as f64);
                let mut d_in = vec![E::ZERO; t_in * c];
                for o in 0..t_out {
                    let g_row = &g_out[o * c..(o + 1) * c];
                    for tap in 0..kernel {
                        let t = (o * stride + tap) as isize - pad_left as isize;
                        if t >= 0 && (t as usize) < t_in {
                            let dst = &mut d_in[t as usize * c..(t as usize + 1) * c];
                            for (d, g) in dst.iter_mut().zip(g_row) {
                                *d += *g * inv_k;
                            }
                        }
                    }
                }
                self.accumulate(input, d_in);
            }
            &Op::Linear { input, weight, bias } => {
                let c_in = self.nodes[weight].shape[0];
                let c_out = self.nodes[weight].shape[1];
                let rows = self.nodes[input].values.len() / c_in;
                let x = &self.nodes[input].values;
                let w = &self.nodes[weight].values;
                let w_t = transpose_copy(w, c_in, c_out);
                let mut d_in = vec![E::ZERO; rows * c_in];
                let mut d_w = vec![E::ZERO; c_in * c_out];
                let mut d_b = vec![E::ZERO; c_out];
                for r in 0..rows {
                    let g_row = &g_out[r * c_out..(r + 1) * c_out];
                    let x_row = &x[r * c_in..(r + 1) * c_in];
                    for (d, g) in d_b.iter_mut().zip(g_row) {
                        *d += *g;
                    }
                    let d_row = &mut d_in[r * c_in..(r + 1) * c_in];
                    for (co, &gv) in g_row.iter().enumerate() {
                        let wt_row = &w_t[co * c_in..(co + 1) * c_in];
                        for (d, wv) in d_row.iter_mut().zip(wt_row) {
                            *d += gv * *wv;
                        }
                    }
                    for (ci, &xv) in x_row.iter().enumerate() {
                        let dw_row = &mut d_w[ci * c_out..(ci + 1) * c_out];
                        for (d, g) in dw_row.iter_mut().zip(g_row) {
                            *d += xv * *g;
                        }
                    }
                }
                self.accumulate(input, d_in);
                self.accumulate(weight, d_w);
                self.accumulate(bias, d_b);
            }
            &Op::Matmul { lhs, rhs } => {
                let (m, k) = (self.nodes[lhs].shape[0], self.nodes[lhs].shape[1]);
                let n = self.nodes[rhs].shape[1];
                let a = &self.nodes[lhs].values;
                let b = &self.nodes[rhs].values;
                let b_t = transpose_copy(b, k, n);
                let mut d_a = vec![E::ZERO; m * k];
                let mut d_b = vec![E::ZERO; k * n];
                for r in 0..m {
                    let g_row = &g_out[r * n..(r + 1) * n];
                    let a_row = &a[r * k..(r + 1) * k];
                    let da_row = &mut d_a[r * k..(r + 1) * k];
                    for (c, &gv) in g_row.iter().enumerate() {
                        let bt_row = &b_t[c * k..(c + 1) * k];
                        for (d, bv) in da_row.iter_mut().zip(bt_row) {
                            *d += gv * *bv;
                        }
                    }
                    for (c, &av) in a_row.iter().enumerate() {
                        let db_row = &mut d_b[c * n..(c + 1) * n];
                        for (d, g) in db_row.iter_mut().zip(g_row) {
                            *d += av * *g;
                        }
                    }
                }
                self.accumulate(lhs, d_a);
                self.accumulate(rhs, d_b);
            }
            &Op::Dot { lhs, rhs } => {
                let g = g_out[0];
                let d_l: Vec<E> = self.nodes[rhs].values.iter().map(|&v| v * g).collect();
                let d_r: Vec<E> = self.nodes[lhs].values.iter().map(|&v| v * g).collect();
                self.accumulate(lhs, d_l);
                self.accumulate(rhs, d_r);
            }
            &Op::Add { lhs, rhs } => {
                self.accumulate(lhs, g_out.to_vec());
                self.accumulate(rhs, g_out.to_vec());
            }
            &Op::Mul { lhs, rhs } => {
                let d_l: Vec<E> =
                    self.nodes[rhs].values.iter().zip(g_out).map(|(v, g)| *v * *g).collect();
                let d_r: Vec<E> =
                    self.nodes[lhs].values.iter().zip(g_out).map(|(v, g)| *v * *g).collect();
                self.accumulate(lhs, d_l);
                self.accumulate(rhs, d_r);
            }
            &Op::Scale { input, factor } => {
                let f = E::from_f64(factor);
                let d: Vec<E> = g_out.iter().map(|&g| g * f).collect();
                self.accumulate(input, d);
            }
            Op::ConcatLast { inputs } => {
                let inputs = inputs.clone();
                let rank = self.nodes[inputs[0]].shape.len();
                let rows = if rank == 2 { self.nodes[inputs[0]].shape[0] } else { 1 };
                let total: usize = inputs
                    .iter()
                    .map(|&id| *self.nodes[id].shape.last().unwrap())
                    .sum();
                let mut col = 0;
                for id in inputs {
                    let w = *self.nodes[id].shape.last().unwrap();
                    let mut d = vec![E::ZERO; rows * w];
                    for row in 0..rows {
                        d[row * w..(row + 1) * w]
                            .copy_from_slice(&g_out[row * total + col..row * total + col + w]);
                    }
                    self.accumulate(id, d);
                    col += w;
                }
            }
            Op::ConcatRows { inputs } | Op::StackRows { inputs } => {
                let inputs = inputs.clone();
                let mut offset = 0;
                for id in inputs {
                    let n = self.nodes[id].values.len();
                    self.accumulate(id, g_out[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            &Op::Row { input, index } => {
                let (t, c) = (self.nodes[input].shape[0], self.nodes[input].shape[1]);
                let mut d = vec![E::ZERO; t * c];
                d[index * c..(index + 1) * c].copy_from_slice(g_out);
                self.accumulate(input, d);
            }
            &Op::Transpose2d { input } => {
                let (rows, cols) = (self.nodes[input].shape[0], self.nodes[input].shape[1]);
                // g_out has shape [cols, rows]; transpose it back.
                let mut d = vec![E::ZERO; rows * cols];
                for r in 0..cols {
                    for c in 0..rows {
                        d[c * cols + r] = g_out[r * rows + c];
                    }
                }
                self.accumulate(input, d);
            }
            &Op::Reshape { input } => {
                self.accumulate(input, g_out.to_vec());
            }
            &Op::Prelu { input, alpha } => {
                let c = *self.nodes[input].shape.last().unwrap();
                let a = &self.nodes[alpha].values;
                let x = &self.nodes[input].values;
                let mut d_x = vec![E::ZERO; x.len()];
                let mut d_a = vec![E::ZERO; c];
                for (i, (&xv, &g)) in x.iter().zip(g_out).enumerate() {
                    if xv > E::ZERO {
                        d_x[i] = g;
                    } else {
                        d_x[i] = a[i % c] * g;
                        d_a[i % c] += xv * g;
                    }
                }
                self.accumulate(input, d_x);
                self.accumulate(alpha, d_a);
            }
            &Op::Sigmoid { input } => {
                let y = &self.nodes[i].values;
                let d: Vec<E> =
                    y.iter().zip(g_out).map(|(&y, &g)| g * y * (E::ONE - y)).collect();
                self.accumulate(input, d);
            }
            &Op::LogSigmoid { input } => {
                // d/dx log(sigmoid(x)) = sigmoid(-x)
                let x = &self.nodes[input].values;
                let d: Vec<E> =
                    x.iter().zip(g_out).map(|(&x, &g)| g * sigmoid_scalar(-x)).collect();
                self.accumulate(input, d);
            }
            &Op::SoftmaxLast { input } => {
                let c = *self.nodes[i].shape.last().unwrap();
                let y = &self.nodes[i].values;
                let mut d = vec![E::ZERO; y.len()];
                for ((y_row, g_row), d_row) in y
                    .chunks_exact(c)
                    .zip(g_out.chunks_exact(c))
                    .zip(d.chunks_exact_mut(c))
                {
                    let mut inner = E::ZERO;
                    for (yv, gv) in y_row.iter().zip(g_row) {
                        inner += *yv * *gv;
                    }
                    for i in 0..c {
                        d_row[i] = y_row[i] * (g_row[i] - inner);
                    }
                }
                self.accumulate(input, d);
            }
            &Op::LayerNorm { input, gain, bias, eps } => {
                let c = *self.nodes[input].shape.last().unwrap();
                let x = &self.nodes[input].values;
                let g = &self.nodes[gain].values;
                let mut d_x = vec![E::ZERO; x.len()];
                let mut d_g = vec![E::ZERO; c];
                let mut d_b = vec![E::ZERO; c];
                let inv_c = E::from_f64(1.0 / c as f64);
                for (row_idx, (x_row, g_row)) in
                    x.chunks_exact(c).zip(g_out.chunks_exact(c)).enumerate()
                {
                    let (mean, rstd) = row_stats(x_row, eps);
                    // d_xhat, plus the two reduction terms of the LN gradient.
                    let mut sum_dxh = E::ZERO;
                    let mut sum_dxh_xh = E::ZERO;
                    for i in 0..c {
                        let xh = (x_row[i] - mean) * rstd;
                        let dxh = g_row[i] * g[i];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        d_g[i] += g_row[i] * xh;
                        d_b[i] += g_row[i];
                    }
                    let d_row = &mut d_x[row_idx * c..(row_idx + 1) * c];
                    for i in 0..c {
                        let xh = (x_row[i] - mean) * rstd;
                        let dxh = g_row[i] * g[i];
                        d_row[i] = rstd * (dxh - inv_c * sum_dxh - inv_c * xh * sum_dxh_xh);
                    }
                }
                self.accumulate(input, d_x);
                self.accumulate(gain, d_g);
                self.accumulate(bias, d_b);
            }
            &Op::ReduceMean { input, axis } => {
                let (t, c) = (self.nodes[input].shape[0], self.nodes[input].shape[1]);
                let n = if axis == 0 { t } else { c };
                let inv = E::from_f64(1.0 / n as f64);
                let mut d = vec![E::ZERO; t * c];
                if axis == 0 {
                    for row in d.chunks_exact_mut(c) {
                        for (dv, gv) in row.iter_mut().zip(g_out) {
                            *dv = *gv * inv;
                        }
                    }
                } else {
                    for (row, gv) in d.chunks_exact_mut(c).zip(g_out) {
                        for dv in row.iter_mut() {
                            *dv = *gv * inv;
                        }
                    }
                }
                self.accumulate(input, d);
            }
            &Op::SumAll { input } => {
                let g = g_out[0];
                let n = self.nodes[input].values.len();
                self.accumulate(input, vec![g; n]);
            }
            &Op::MeanAll { input } => {
                let n = self.nodes[input].values.len();
                let g = g_out[0] * E::from_f64(1.0 / n as f64);
                self.accumulate(input, vec![g; n]);
            }
            Op::SelectClass { input, labels } => {
                let input = *input;
                let c = self.nodes[input].shape[1];
                let mut d = vec![E::ZERO; self.nodes[input].values.len()];
                for (t, &l) in labels.iter().enumerate() {
                    d[t * c + l] = g_out[t];
                }
                self.accumulate(input, d);
            }
            &Op::LogClamped { input, min } => {
                let floor = E::from_f64(min);
                let x = &self.nodes[input].values;
                let d: Vec<E> = x
                    .iter()
                    .zip(g_out)
                    .map(|(&x, &g)| if x > floor { g / x } else { E::ZERO })
                    .collect();
                self.accumulate(input, d);
            }
        }
    }
}

fn div_ceil(a: usize, b: usize) -> usize {
    (a + b - 1) / b
}

/// `[rows, cols]` -> `[cols, rows]` copy; keeps backward inner loops on
/// contiguous memory.
fn transpose_copy<E: Element>(x: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn sigmoid_scalar<E: Element>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

fn log_sigmoid_scalar<E: Element>(x: E) -> E {
    if x >= E::ZERO {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn row_stats<E: Element>(row: &[E], eps: f64) -> (E, E) {
    let inv_c = E::from_f64(1.0 / row.len() as f64);
    let mut mean = E::ZERO;
    for &v in row {
        mean += v;
    }
    mean = mean * inv_c;
    let mut var = E::ZERO;
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    var = var * inv_c;
    let rstd = E::ONE / (var + E::from_f64(eps)).sqrt();
    (mean, rstd)
}

/// `out[r, :] += x[r, :] @ w` with optional bias; `x: [rows, k]`, `w: [k, n]`.
fn matmul_bias<E: Element>(
    x: &[E],
    w: &[E],
    bias: Option<&[E]>,
    out: &mut [E],
    rows: usize,
    k: usize,
    n: usize,
) {
    for r in 0..rows {
        let out_row = &mut out[r * n..(r + 1) * n];
        if let Some(b) = bias {
            out_row.copy_from_slice(b);
        }
        let x_row = &x[r * k..(r + 1) * k];
        for (ci, &xv) in x_row.iter().enumerate() {
            let w_row = &w[ci * n..(ci + 1) * n];
            for (o, wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * *wv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward<E: Element>(
    x: &[E],
    kernel: &[E],
    bias: &[E],
    out: &mut [E],
    t_in: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dilation: usize,
) {
    let pad_left = ((k - 1) * dilation) / 2;
    let t_out = div_ceil(t_in, stride);
    for o in 0..t_out {
        let out_row = &mut out[o * c_out..(o + 1) * c_out];
        out_row.copy_from_slice(bias);
        for tap in 0..k {
            let t = (o * stride + tap * dilation) as isize - pad_left as isize;
            if t < 0 || t as usize >= t_in {
                continue;
            }
            let x_row = &x[t as usize * c_in..(t as usize + 1) * c_in];
            let k_tap = &kernel[tap * c_in * c_out..(tap + 1) * c_in * c_out];
            for (ci, &xv) in x_row.iter().enumerate() {
                let w_row = &k_tap[ci * c_out..(ci + 1) * c_out];
                for (o, wv) in out_row.iter_mut().zip(w_row) {
                    *o += xv * *wv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward<E: Element>(
    x: &[E],
    kernel: &[E],
    g_out: &[E],
    d_in: &mut [E],
    d_kernel: &mut [E],
    d_bias: &mut [E],
    t_in: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dilation: usize,
) {
    let pad_left = ((k - 1) * dilation) / 2;
    let t_out = div_ceil(t_in, stride);
    // Per-tap transposed kernels ([c_out, c_in]) so the input-gradient inner
    // loop runs over contiguous memory.
    let kernel_t: Vec<Vec<E>> = (0..k)
        .map(|tap| transpose_copy(&kernel[tap * c_in * c_out..(tap + 1) * c_in * c_out], c_in, c_out))
        .collect();
    for o in 0..t_out {
        let g_row = &g_out[o * c_out..(o + 1) * c_out];
        for (d, g) in d_bias.iter_mut().zip(g_row) {
            *d += *g;
        }
        for tap in 0..k {
            let t = (o * stride + tap * dilation) as isize - pad_left as isize;
            if t < 0 || t as usize >= t_in {
                continue;
            }
            let x_row = &x[t as usize * c_in..(t as usize + 1) * c_in];
            let d_row = &mut d_in[t as usize * c_in..(t as usize + 1) * c_in];
            let k_t = &kernel_t[tap];
            for (co, &gv) in g_row.iter().enumerate() {
                let kt_row = &k_t[co * c_in..(co + 1) * c_in];
                for (d, wv) in d_row.iter_mut().zip(kt_row) {
                    *d += gv * *wv;
                }
            }
            let k_tap_base = tap * c_in * c_out;
            for (ci, &xv) in x_row.iter().enumerate() {
                let dk_row =
                    &mut d_kernel[k_tap_base + ci * c_out..k_tap_base + (ci + 1) * c_out];
                for (d, g) in dk_row.iter_mut().zip(g_row) {
                    *d += xv * *g;
                }
            }
        }
    }
}
