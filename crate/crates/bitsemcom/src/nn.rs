//! Convolutional layers as owned parameter tensors plus tape plumbing.
//!
//! A layer registers its parameters on a fresh tape for each forward/backward
//! episode and absorbs the resulting gradients back into its tensors, where
//! they accumulate until the optimizer consumes them.

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// weight [Co, Ci, K, K]
    Standard,
    /// weight [Ci, Co, K, K], upsampling
    Transposed,
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub kind: ConvKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Tape handles for one registered layer.
#[derive(Debug, Clone, Copy)]
pub struct ConvNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl Conv2dLayer {
    pub fn conv(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let weight = he_init(vec![c_out, c_in, k, k], c_in * k * k, rng);
        let bias = Tensor::param(vec![c_out], vec![0.0; c_out]).expect("bias shape");
        Conv2dLayer {
            weight,
            bias,
            kind: ConvKind::Standard,
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn transposed(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let weight = he_init(vec![c_in, c_out, k, k], c_in * k * k, rng);
        let bias = Tensor::param(vec![c_out], vec![0.0; c_out]).expect("bias shape");
        Conv2dLayer {
            weight,
            bias,
            kind: ConvKind::Transposed,
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> ConvNodes {
        ConvNodes {
            weight: tape.leaf(&self.weight),
            bias: tape.leaf(&self.bias),
        }
    }

    pub fn forward(&self, tape: &mut Tape, nodes: ConvNodes, input: NodeId) -> Result<NodeId> {
        match self.kind {
            ConvKind::Standard => tape.conv2d(input, nodes.weight, nodes.bias, self.stride, self.pad),
            ConvKind::Transposed => {
                tape.conv2d_transposed(input, nodes.weight, nodes.bias, self.stride, self.pad)
            }
        }
    }

    /// Pull this episode's gradients off the tape into the owned tensors.
    pub fn absorb_grads(&mut self, tape: &Tape, nodes: ConvNodes) -> Result<()> {
        if let Some(g) = tape.grad(nodes.weight) {
            self.weight.accumulate_grad(g)?;
        }
        if let Some(g) = tape.grad(nodes.bias) {
            self.bias.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// Multiply-accumulate count for one image of `h` x `w` input, plus the
    /// output geometry.
    pub fn macs(&self, h: usize, w: usize) -> (usize, usize, usize) {
        match self.kind {
            ConvKind::Standard => {
                let oh = (h + 2 * self.pad - self.k) / self.stride + 1;
                let ow = (w + 2 * self.pad - self.k) / self.stride + 1;
                (oh * ow * self.c_out * self.c_in * self.k * self.k, oh, ow)
            }
            ConvKind::Transposed => {
                let oh = (h - 1) * self.stride + self.k - 2 * self.pad;
                let ow = (w - 1) * self.stride + self.k - 2 * self.pad;
                (h * w * self.c_in * self.c_out * self.k * self.k, oh, ow)
            }
        }
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn he_init(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| std * rng.gaussian()).collect();
    Tensor::param(shape, values).expect("weight shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_counts_weight_and_bias() {
        let mut rng = Rng::seed_from(0);
        let layer = Conv2dLayer::conv(3, 16, 3, 1, 1, &mut rng);
        assert_eq!(layer.param_count(), 16 * 3 * 9 + 16);
    }

    #[test]
    fn macs_track_geometry() {
        let mut rng = Rng::seed_from(0);
        let down = Conv2dLayer::conv(16, 16, 3, 2, 1, &mut rng);
        let (macs, oh, ow) = down.macs(32, 32);
        assert_eq!((oh, ow), (16, 16));
        assert_eq!(macs, 16 * 16 * 16 * 16 * 9);

        let up = Conv2dLayer::transposed(16, 16, 4, 2, 1, &mut rng);
        let (_, oh, ow) = up.macs(8, 8);
        assert_eq!((oh, ow), (16, 16));
    }

    #[test]
    fn forward_backward_through_layer() {
        let mut rng = Rng::seed_from(1);
        let mut layer = Conv2dLayer::conv(1, 2, 3, 1, 1, &mut rng);
        let mut tape = Tape::new();
        let nodes = layer.register(&mut tape);
        let x = tape.constant(vec![1, 1, 4, 4], vec![0.3; 16]);
        let y = layer.forward(&mut tape, nodes, x).unwrap();
        let l = tape.mean(y);
        tape.backward(l).unwrap();
        layer.absorb_grads(&tape, nodes).unwrap();
        let gnorm: f64 = layer.weight.grad().unwrap().iter().map(|g| g * g).sum();
        assert!(gnorm > 0.0);
    }
}
