//! Convolutional semantic encoder and decoder.
//!
//! The encoder downsamples by 4 in each spatial dimension (two stride-2
//! stages interleaved with stride-1 blocks) and emits a continuous feature
//! map of `c_latent` channels; flattened, this is the feature vector of
//! length `L_s`. The decoder consumes any vector of that length with values
//! in [0, 1] — hard bits and soft posteriors go through the same network —
//! and ends in a sigmoid so reconstructions are valid images.

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ConvNodes};
use crate::rng::{substream, Rng};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const DOWNSAMPLE: usize = 4;

/// Geometry and width choices that fix every layer shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecArch {
    pub h: usize,
    pub w: usize,
    /// Hidden channel width of the conv trunk.
    pub width: usize,
    /// Channel depth of the latent feature map.
    pub c_latent: usize,
}

impl CodecArch {
    pub fn new(h: usize, w: usize, width: usize, c_latent: usize) -> Result<Self> {
        if h == 0 || w == 0 || !h.is_multiple_of(DOWNSAMPLE) || !w.is_multiple_of(DOWNSAMPLE) {
            return Err(Error::invalid(format!(
                "image geometry {h}x{w} must be divisible by the downsampling factor {DOWNSAMPLE}"
            )));
        }
        if width == 0 || c_latent == 0 {
            return Err(Error::invalid("codec widths must be positive"));
        }
        Ok(CodecArch {
            h,
            w,
            width,
            c_latent,
        })
    }

    pub fn latent_h(&self) -> usize {
        self.h / DOWNSAMPLE
    }

    pub fn latent_w(&self) -> usize {
        self.w / DOWNSAMPLE
    }

    /// L_s: flattened feature length (equals L_b in the default configuration).
    pub fn feature_len(&self) -> usize {
        self.c_latent * self.latent_h() * self.latent_w()
    }
}

/// Encoder + decoder parameters.
#[derive(Debug, Clone)]
pub struct Codec {
    pub arch: CodecArch,
    enc: Vec<Conv2dLayer>,
    dec: Vec<Conv2dLayer>,
}

pub struct CodecNodes {
    enc: Vec<ConvNodes>,
    dec: Vec<ConvNodes>,
}

const SEED_TAG_CODEC: u64 = 0x434f444543; // "CODEC"

impl Codec {
    pub fn new(arch: CodecArch, seed: u64) -> Self {
        let mut rng = Rng::seed_from(substream(seed, SEED_TAG_CODEC));
        let w = arch.width;
        let c = arch.c_latent;
        let enc = vec![
            Conv2dLayer::conv(3, w, 3, 1, 1, &mut rng),
            Conv2dLayer::conv(w, w, 3, 2, 1, &mut rng),
            Conv2dLayer::conv(w, w, 3, 1, 1, &mut rng),
            Conv2dLayer::conv(w, w, 3, 2, 1, &mut rng),
            Conv2dLayer::conv(w, c, 3, 1, 1, &mut rng),
        ];
        let dec = vec![
            Conv2dLayer::conv(c, w, 3, 1, 1, &mut rng),
            Conv2dLayer::transposed(w, w, 4, 2, 1, &mut rng),
            Conv2dLayer::conv(w, w, 3, 1, 1, &mut rng),
            Conv2dLayer::transposed(w, w, 4, 2, 1, &mut rng),
            Conv2dLayer::conv(w, 3, 3, 1, 1, &mut rng),
        ];
        Codec { arch, enc, dec }
    }

    pub fn register(&self, tape: &mut Tape) -> CodecNodes {
        CodecNodes {
            enc: self.enc.iter().map(|l| l.register(tape)).collect(),
            dec: self.dec.iter().map(|l| l.register(tape)).collect(),
        }
    }

    /// Put an image batch on the tape as a non-trainable leaf.
    pub fn input_node(&self, tape: &mut Tape, x: &ImageBatch) -> Result<NodeId> {
        if x.h != self.arch.h || x.w != self.arch.w {
            return Err(Error::invalid(format!(
                "batch geometry {}x{} does not match codec {}x{}",
                x.h, x.w, self.arch.h, self.arch.w
            )));
        }
        Ok(tape.constant(vec![x.n, 3, x.h, x.w], x.data().to_vec()))
    }

    /// x [N, 3, H, W] -> continuous features [N, L_s].
    pub fn encode(&self, tape: &mut Tape, nodes: &CodecNodes, x: NodeId) -> Result<NodeId> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.arch.h || shape[3] != self.arch.w {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: shape,
                rhs: vec![0, 3, self.arch.h, self.arch.w],
            });
        }
        let n = shape[0];
        let mut cur = x;
        for (i, layer) in self.enc.iter().enumerate() {
            cur = layer.forward(tape, nodes.enc[i], cur)?;
            if i + 1 < self.enc.len() {
                cur = tape.relu(cur);
            }
        }
        tape.reshape(cur, vec![n, self.arch.feature_len()])
    }

    /// Any vector in [0, 1]^{L_b} (bits or posteriors) -> image batch.
    pub fn decode(&self, tape: &mut Tape, nodes: &CodecNodes, input: NodeId) -> Result<NodeId> {
        let shape = tape.shape(input).to_vec();
        let l = self.arch.feature_len();
        if shape.len() != 2 || shape[1] != l {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: shape,
                rhs: vec![0, l],
            });
        }
        let n = shape[0];
        let mut cur = tape.reshape(
            input,
            vec![n, self.arch.c_latent, self.arch.latent_h(), self.arch.latent_w()],
        )?;
        for (i, layer) in self.dec.iter().enumerate() {
            cur = layer.forward(tape, nodes.dec[i], cur)?;
            if i + 1 < self.dec.len() {
                cur = tape.relu(cur);
            }
        }
        Ok(tape.sigmoid(cur))
    }

    pub fn absorb_grads(&mut self, tape: &Tape, nodes: &CodecNodes) -> Result<()> {
        for (layer, n) in self.enc.iter_mut().zip(&nodes.enc) {
            layer.absorb_grads(tape, *n)?;
        }
        for (layer, n) in self.dec.iter_mut().zip(&nodes.dec) {
            layer.absorb_grads(tape, *n)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.enc
            .iter()
            .chain(&self.dec)
            .map(Conv2dLayer::param_count)
            .sum()
    }

    /// Forward multiply-accumulates for one image (encode plus decode).
    pub fn macs_per_image(&self) -> usize {
        let mut total = 0;
        let (mut h, mut w) = (self.arch.h, self.arch.w);
        for layer in &self.enc {
            let (m, oh, ow) = layer.macs(h, w);
            total += m;
            h = oh;
            w = ow;
        }
        for layer in &self.dec {
            let (m, oh, ow) = layer.macs(h, w);
            total += m;
            h = oh;
            w = ow;
        }
        total
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter().enumerate() {
            out.push((format!("enc{i}.weight"), &l.weight));
            out.push((format!("enc{i}.bias"), &l.bias));
        }
        for (i, l) in self.dec.iter().enumerate() {
            out.push((format!("dec{i}.weight"), &l.weight));
            out.push((format!("dec{i}.bias"), &l.bias));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter_mut().enumerate() {
            out.push((format!("enc{i}.weight"), &mut l.weight));
            out.push((format!("enc{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.dec.iter_mut().enumerate() {
            out.push((format!("dec{i}.weight"), &mut l.weight));
            out.push((format!("dec{i}.bias"), &mut l.bias));
        }
        out
    }

    /// Per-encoder-layer gradient norms; used to check that gradients reach
    /// every layer after a training step.
    pub fn encoder_grad_norms(&self) -> Vec<f64> {
        self.enc
            .iter()
            .map(|l| {
                l.weight
                    .grad()
                    .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .unwrap_or(0.0)
            })
            .collect()
    }
}
