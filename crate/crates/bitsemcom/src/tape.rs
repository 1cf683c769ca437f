//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] owns every tensor of one forward/backward episode in an arena
//! indexed by [`NodeId`]. Operations record themselves in forward order and
//! are replayed in reverse by [`Tape::backward`], accumulating gradients for
//! every node that (transitively) depends on a `requires_grad` leaf.
//!
//! The tape is single-threaded by construction; independent evaluations run
//! on independent tapes.

use crate::conv::{
    conv2d_backward, conv2d_forward, conv2d_transposed_backward, conv2d_transposed_forward,
    ConvDims,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    needs_grad: bool,
}

enum Op {
    Add { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Scale { a: NodeId, c: f64, out: NodeId },
    Matmul { a: NodeId, b: NodeId, out: NodeId, m: usize, k: usize, n: usize },
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, out: NodeId, dims: ConvDims },
    ConvT2d { input: NodeId, weight: NodeId, bias: NodeId, out: NodeId, dims: ConvDims },
    Relu { a: NodeId, out: NodeId },
    Sigmoid { a: NodeId, out: NodeId },
    Tanh { a: NodeId, out: NodeId },
    Exp { a: NodeId, out: NodeId },
    Log { a: NodeId, out: NodeId },
    SoftmaxRows { a: NodeId, out: NodeId, width: usize },
    Reshape { a: NodeId, out: NodeId },
    TransposeLast2 { a: NodeId, out: NodeId, batch: usize, rows: usize, cols: usize },
    SelectLast { a: NodeId, out: NodeId, width: usize, index: usize },
    Mean { a: NodeId, out: NodeId },
    Mse { a: NodeId, b: NodeId, out: NodeId },
    StraightThrough { surrogate: NodeId, out: NodeId },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
    pass: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Copy a tensor onto the tape as a leaf.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.values().to_vec(), t.requires_grad())
    }

    /// A leaf that never receives gradient (inputs, noise, received values).
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> NodeId {
        self.push(shape, values, false)
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: NodeId) -> usize {
        self.nodes[id.0].values.len()
    }

    /// Gradient accumulated for `id`, if any flowed to it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            values,
            needs_grad,
        });
        self.grads.push(None);
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    // ── Elementwise and binary ops ───────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let out = self.push(
            self.nodes[a.0].shape.clone(),
            values,
            self.needs(a) || self.needs(b),
        );
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let out = self.push(
            self.nodes[a.0].shape.clone(),
            values,
            self.needs(a) || self.needs(b),
        );
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        if !c.is_finite() {
            return Err(Error::invalid(format!("scale factor {c} is not finite")));
        }
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| c * x).collect();
        let out = self.push(self.nodes[a.0].shape.clone(), values, self.needs(a));
        self.ops.push(Op::Scale { a, c, out });
        Ok(out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let x = av[i * k + l];
                let brow = &bv[l * n..][..n];
                let orow = &mut values[i * n..][..n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        let out = self.push(vec![m, n], values, self.needs(a) || self.needs(b));
        self.ops.push(Op::Matmul { a, b, out, m, k, n });
        Ok(out)
    }

    // ── Convolutions ─────────────────────────────────────────────────────

    /// input [N, Ci, H, W] * weight [Co, Ci, K, K] + bias [Co].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let dims = self.conv_dims("conv2d", input, weight, bias, stride, pad, false)?;
        let (oh, ow) = dims.out_hw();
        let values = conv2d_forward(
            &self.nodes[input.0].values,
            &self.nodes[weight.0].values,
            &self.nodes[bias.0].values,
            &dims,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        let out = self.push(vec![dims.n, dims.c_out, oh, ow], values, needs);
        self.ops.push(Op::Conv2d {
            input,
            weight,
            bias,
            out,
            dims,
        });
        Ok(out)
    }

    /// input [N, Ci, H, W] * weight [Ci, Co, K, K] + bias [Co], upsampling.
    pub fn conv2d_transposed(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let dims = self.conv_dims("conv2d_transposed", input, weight, bias, stride, pad, true)?;
        let (oh, ow) = dims.transposed_out_hw();
        let values = conv2d_transposed_forward(
            &self.nodes[input.0].values,
            &self.nodes[weight.0].values,
            &self.nodes[bias.0].values,
            &dims,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        let out = self.push(vec![dims.n, dims.c_out, oh, ow], values, needs);
        self.ops.push(Op::ConvT2d {
            input,
            weight,
            bias,
            out,
            dims,
        });
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_dims(
        &self,
        op: &'static str,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
        transposed: bool,
    ) -> Result<ConvDims> {
        let si = &self.nodes[input.0].shape;
        let sw = &self.nodes[weight.0].shape;
        let sb = &self.nodes[bias.0].shape;
        let bad = |lhs: &Vec<usize>, rhs: &Vec<usize>| Error::ShapeMismatch {
            op,
            lhs: lhs.clone(),
            rhs: rhs.clone(),
        };
        if si.len() != 4 || sw.len() != 4 || sw[2] != sw[3] {
            return Err(bad(si, sw));
        }
        // conv weights are [Co, Ci, K, K]; transposed weights are [Ci, Co, K, K]
        let (c_in_w, c_out) = if transposed {
            (sw[0], sw[1])
        } else {
            (sw[1], sw[0])
        };
        if si[1] != c_in_w {
            return Err(bad(si, sw));
        }
        if sb.len() != 1 || sb[0] != c_out {
            return Err(bad(sw, sb));
        }
        if stride == 0 {
            return Err(Error::invalid(format!("{op}: stride must be positive")));
        }
        let dims = ConvDims {
            n: si[0],
            c_in: si[1],
            h: si[2],
            w: si[3],
            c_out,
            k: sw[2],
            stride,
            pad,
        };
        if !transposed && (dims.h + 2 * pad < dims.k || dims.w + 2 * pad < dims.k) {
            return Err(Error::invalid(format!(
                "{op}: kernel {} exceeds padded input {}x{}",
                dims.k,
                dims.h + 2 * pad,
                dims.w + 2 * pad
            )));
        }
        Ok(dims)
    }

    // ── Pointwise nonlinearities ─────────────────────────────────────────

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>, bool) {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| f(x)).collect();
        (self.nodes[a.0].shape.clone(), values, self.needs(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (shape, values, needs) = self.unary(a, |x| x.max(0.0));
        let out = self.push(shape, values, needs);
        self.ops.push(Op::Relu { a, out });
        out
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let (shape, values, needs) = self.unary(a, sigmoid_scalar);
        let out = self.push(shape, values, needs);
        self.ops.push(Op::Sigmoid { a, out });
        out
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (shape, values, needs) = self.unary(a, f64::tanh);
        let out = self.push(shape, values, needs);
        self.ops.push(Op::Tanh { a, out });
        out
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let (shape, values, needs) = self.unary(a, f64::exp);
        let out = self.push(shape, values, needs);
        self.ops.push(Op::Exp { a, out });
        out
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`] so degenerate
    /// probabilities cannot produce -inf or unbounded gradients.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let (shape, values, needs) = self.unary(a, |x| x.max(LOG_FLOOR).ln());
        let out = self.push(shape, values, needs);
        self.ops.push(Op::Log { a, out });
        out
    }

    /// Softmax over the trailing dimension of size `width`.
    pub fn softmax_rows(&mut self, a: NodeId, width: usize) -> Result<NodeId> {
        let numel = self.numel(a);
        if width == 0 || !numel.is_multiple_of(width) {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: vec![width],
            });
        }
        let mut values = self.nodes[a.0].values.clone();
        for row in values.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = self.push(self.nodes[a.0].shape.clone(), values, self.needs(a));
        self.ops.push(Op::SoftmaxRows { a, out, width });
        Ok(out)
    }

    // ── Structure ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.numel(a) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let values = self.nodes[a.0].values.clone();
        let out = self.push(shape, values, self.needs(a));
        self.ops.push(Op::Reshape { a, out });
        Ok(out)
    }

    /// Swap the two trailing axes: [..., r, c] -> [..., c, r].
    pub fn transpose_last2(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose_last2",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch = self.numel(a) / (rows * cols);
        let values = transpose_batched(&self.nodes[a.0].values, batch, rows, cols);
        let mut out_shape = shape;
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        let out = self.push(out_shape, values, self.needs(a));
        self.ops.push(Op::TransposeLast2 {
            a,
            out,
            batch,
            rows,
            cols,
        });
        Ok(out)
    }

    /// Select one component of the trailing axis: [..., w] -> [...].
    pub fn select_last(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let shape = self.nodes[a.0].shape.clone();
        let width = *shape.last().unwrap_or(&0);
        if shape.len() < 2 || index >= width {
            return Err(Error::ShapeMismatch {
                op: "select_last",
                lhs: shape,
                rhs: vec![index],
            });
        }
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .chunks(width)
            .map(|row| row[index])
            .collect();
        let out_shape = shape[..shape.len() - 1].to_vec();
        let out = self.push(out_shape, values, self.needs(a));
        self.ops.push(Op::SelectLast {
            a,
            out,
            width,
            index,
        });
        Ok(out)
    }

    // ── Reductions and losses ────────────────────────────────────────────

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.numel(a) as f64;
        let sum: f64 = self.nodes[a.0].values.iter().sum();
        let needs = self.needs(a);
        let out = self.push(vec![1], vec![sum / n], needs);
        self.ops.push(Op::Mean { a, out });
        out
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mse", a, b)?;
        let n = self.numel(a) as f64;
        let sum: f64 = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let needs = self.needs(a) || self.needs(b);
        let out = self.push(vec![1], vec![sum / n], needs);
        self.ops.push(Op::Mse { a, b, out });
        Ok(out)
    }

    /// Forward value of `forward_value`; backward routes the incoming
    /// gradient unchanged to `surrogate` and none to `forward_value`.
    pub fn straight_through(&mut self, forward_value: NodeId, surrogate: NodeId) -> Result<NodeId> {
        self.check_same_shape("straight_through", forward_value, surrogate)?;
        let values = self.nodes[forward_value.0].values.clone();
        let needs = self.needs(surrogate);
        let out = self.push(self.nodes[forward_value.0].shape.clone(), values, needs);
        self.ops.push(Op::StraightThrough { surrogate, out });
        Ok(out)
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Replay the tape in reverse from a scalar loss, accumulating gradients.
    ///
    /// Each call runs one full pass; a second call without clearing adds its
    /// pass on top of the first (gradients accumulate additively).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        // Pass-local propagation buffer keeps repeated passes independent.
        self.pass = vec![None; self.nodes.len()];
        self.accumulate(loss, &[1.0]);
        for idx in (0..self.ops.len()).rev() {
            self.backward_op(idx);
        }
        for (slot, pass) in self.grads.iter_mut().zip(self.pass.drain(..)) {
            if let Some(p) = pass {
                match slot {
                    Some(g) => {
                        for (gi, pi) in g.iter_mut().zip(&p) {
                            *gi += pi;
                        }
                    }
                    None => *slot = Some(p),
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.pass[id.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => self.pass[id.0] = Some(delta.to_vec()),
        }
    }

    fn take_out_grad(&self, out: NodeId) -> Option<Vec<f64>> {
        self.pass[out.0].clone()
    }

    fn backward_op(&mut self, idx: usize) {
        // Ops are small enums; cloning ids out avoids borrow juggling.
        match &self.ops[idx] {
            Op::Add { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                if let Some(g) = self.take_out_grad(out) {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
            }
            Op::Mul { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].values)
                        .map(|(gi, bi)| gi * bi)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(gi, ai)| gi * ai)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
            }
            Op::Scale { a, c, out } => {
                let (a, c, out) = (*a, *c, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    self.accumulate(a, &da);
                }
            }
            Op::Matmul { a, b, out, m, k, n } => {
                let (a, b, out, m, k, n) = (*a, *b, *out, *m, *k, *n);
                if let Some(g) = self.take_out_grad(out) {
                    let av = &self.nodes[a.0].values;
                    let bv = &self.nodes[b.0].values;
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for l in 0..k {
                                da[i * k + l] += gij * bv[l * n + j];
                            }
                        }
                    }
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for l in 0..k {
                            let ail = av[i * k + l];
                            for j in 0..n {
                                db[l * n + j] += ail * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                out,
                dims,
            } => {
                let (input, weight, bias, out, dims) = (*input, *weight, *bias, *out, *dims);
                if let Some(g) = self.take_out_grad(out) {
                    let (d_in, d_w, d_b) = conv2d_backward(
                        &self.nodes[input.0].values,
                        &self.nodes[weight.0].values,
                        &g,
                        &dims,
                    );
                    self.accumulate(input, &d_in);
                    self.accumulate(weight, &d_w);
                    self.accumulate(bias, &d_b);
                }
            }
            Op::ConvT2d {
                input,
                weight,
                bias,
                out,
                dims,
            } => {
                let (input, weight, bias, out, dims) = (*input, *weight, *bias, *out, *dims);
                if let Some(g) = self.take_out_grad(out) {
                    let (d_in, d_w, d_b) = conv2d_transposed_backward(
                        &self.nodes[input.0].values,
                        &self.nodes[weight.0].values,
                        &g,
                        &dims,
                    );
                    self.accumulate(input, &d_in);
                    self.accumulate(weight, &d_w);
                    self.accumulate(bias, &d_b);
                }
            }
            Op::Relu { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(gi, ai)| if *ai > 0.0 { *gi } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
            }
            Op::Sigmoid { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[out.0].values)
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect();
                    self.accumulate(a, &da);
                }
            }
            Op::Tanh { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[out.0].values)
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    self.accumulate(a, &da);
                }
            }
            Op::Exp { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[out.0].values)
                        .map(|(gi, y)| gi * y)
                        .collect();
                    self.accumulate(a, &da);
                }
            }
            Op::Log { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(gi, ai)| gi / ai.max(LOG_FLOOR))
                        .collect();
                    self.accumulate(a, &da);
                }
            }
            Op::SoftmaxRows { a, out, width } => {
                let (a, out, width) = (*a, *out, *width);
                if let Some(g) = self.take_out_grad(out) {
                    let y = &self.nodes[out.0].values;
                    let mut da = vec![0.0; y.len()];
                    for r in 0..y.len() / width {
                        let ys = &y[r * width..][..width];
                        let gs = &g[r * width..][..width];
                        let dot: f64 = ys.iter().zip(gs).map(|(yi, gi)| yi * gi).sum();
                        for i in 0..width {
                            da[r * width + i] = ys[i] * (gs[i] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
            }
            Op::Reshape { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    self.accumulate(a, &g);
                }
            }
            Op::TransposeLast2 {
                a,
                out,
                batch,
                rows,
                cols,
            } => {
                let (a, out, batch, rows, cols) = (*a, *out, *batch, *rows, *cols);
                if let Some(g) = self.take_out_grad(out) {
                    // grad has shape [..., cols, rows]; transpose it back
                    let da = transpose_batched(&g, batch, cols, rows);
                    self.accumulate(a, &da);
                }
            }
            Op::SelectLast {
                a,
                out,
                width,
                index,
            } => {
                let (a, out, width, index) = (*a, *out, *width, *index);
                if let Some(g) = self.take_out_grad(out) {
                    let mut da = vec![0.0; self.nodes[a.0].values.len()];
                    for (r, gi) in g.iter().enumerate() {
                        da[r * width + index] = *gi;
                    }
                    self.accumulate(a, &da);
                }
            }
            Op::Mean { a, out } => {
                let (a, out) = (*a, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let n = self.nodes[a.0].values.len();
                    let da = vec![g[0] / n as f64; n];
                    self.accumulate(a, &da);
                }
            }
            Op::Mse { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                if let Some(g) = self.take_out_grad(out) {
                    let n = self.nodes[a.0].values.len() as f64;
                    let scale = 2.0 * g[0] / n;
                    let diff: Vec<f64> = self.nodes[a.0]
                        .values
                        .iter()
                        .zip(&self.nodes[b.0].values)
                        .map(|(x, y)| scale * (x - y))
                        .collect();
                    self.accumulate(a, &diff);
                    let neg: Vec<f64> = diff.iter().map(|d| -d).collect();
                    self.accumulate(b, &neg);
                }
            }
            Op::StraightThrough { surrogate, out } => {
                let (surrogate, out) = (*surrogate, *out);
                if let Some(g) = self.take_out_grad(out) {
                    self.accumulate(surrogate, &g);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn transpose_batched(values: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for b in 0..batch {
        let src = &values[b * rows * cols..][..rows * cols];
        let dst = &mut out[b * rows * cols..][..rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}
