//! Learnable probabilistic bit mapper.
//!
//! A small convolutional network turns the continuous feature map into a
//! per-bit categorical distribution p_s (an L_b x 2 row-stochastic matrix).
//! Bits are drawn with the Gumbel-Max trick — argmax over Gumbel-perturbed
//! log probabilities — which transmits genuinely discrete bits in training
//! and inference alike. Gradients flow through the Gumbel-Softmax relaxation
//! at temperature tau, routed around the hard sample by a straight-through
//! estimator.

use crate::codec::CodecArch;
use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ConvNodes};
use crate::rng::{substream, Rng};
use crate::tape::{NodeId, Tape, LOG_FLOOR};
use crate::tensor::Tensor;

/// Row-stochastic per-bit distribution: row i is [P(b_i = 0), P(b_i = 1)].
#[derive(Debug, Clone, PartialEq)]
pub struct BitDistribution {
    rows: Vec<[f64; 2]>,
}

impl BitDistribution {
    /// Build from rows, flooring entries at 1e-12 and checking normalization.
    pub fn new(rows: Vec<[f64; 2]>) -> Result<Self> {
        let mut floored = rows;
        for row in floored.iter_mut() {
            row[0] = row[0].max(LOG_FLOOR);
            row[1] = row[1].max(LOG_FLOOR);
            let sum = row[0] + row[1];
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "bit distribution row {row:?} sums to {sum}, not 1"
                )));
            }
        }
        Ok(BitDistribution { rows: floored })
    }

    /// Interpret a flat [L, 2] value slice (e.g. tape output) as rows.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::invalid("flat bit distribution length must be even"));
        }
        Self::new(values.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Per-bit standard Gumbel noise, one pair per row.
#[derive(Debug, Clone)]
pub struct GumbelNoise {
    rows: Vec<[f64; 2]>,
}

impl GumbelNoise {
    pub fn sample(len: usize, rng: &mut Rng) -> Self {
        let rows = (0..len).map(|_| [rng.gumbel(), rng.gumbel()]).collect();
        GumbelNoise { rows }
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| [r[0], r[1]]).collect()
    }
}

/// Hard Gumbel-Max sample: one-hot rows and the decoded bits.
///
/// Score k is `g_k + ln(pi_k)`; exact ties resolve to the first component,
/// i.e. bit 0.
pub fn gumbel_max_sample(p: &BitDistribution, g: &GumbelNoise) -> (Vec<[u8; 2]>, Vec<u8>) {
    debug_assert_eq!(p.len(), g.len());
    let mut one_hot = Vec::with_capacity(p.len());
    let mut bits = Vec::with_capacity(p.len());
    for (row, noise) in p.rows.iter().zip(&g.rows) {
        let s0 = noise[0] + row[0].max(LOG_FLOOR).ln();
        let s1 = noise[1] + row[1].max(LOG_FLOOR).ln();
        let bit = u8::from(s1 > s0);
        one_hot.push(if bit == 1 { [0, 1] } else { [1, 0] });
        bits.push(bit);
    }
    (one_hot, bits)
}

/// Gumbel-Softmax relaxation at temperature `tau`:
/// `t_k = softmax_k((ln(pi_k) + g_k) / tau)`.
pub fn gumbel_softmax_relax(
    p: &BitDistribution,
    g: &GumbelNoise,
    tau: f64,
) -> Result<Vec<[f64; 2]>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    debug_assert_eq!(p.len(), g.len());
    let mut out = Vec::with_capacity(p.len());
    for (row, noise) in p.rows.iter().zip(&g.rows) {
        let s0 = (noise[0] + row[0].max(LOG_FLOOR).ln()) / tau;
        let s1 = (noise[1] + row[1].max(LOG_FLOOR).ln()) / tau;
        let m = s0.max(s1);
        let e0 = (s0 - m).exp();
        let e1 = (s1 - m).exp();
        out.push([e0 / (e0 + e1), e1 / (e0 + e1)]);
    }
    Ok(out)
}

/// The probabilistic generative network plus sampling machinery.
///
/// Two channel-preserving 3x3 convolutions capture spatial structure of the
/// feature map; their output is added back onto the features (residual) and
/// a 1x1 projection emits two logits per bit. By default the bit count
/// equals the feature length (L_b = L_s); a different `l_b` that still
/// divides the feature grid switches on an extra projection width.
///
/// Initialization matters here: the projection starts as an identity
/// binarizer (logit difference = 2 z per feature), so the very first
/// sampled bits are a stochastic rounding of the features the decoder was
/// pretrained on, instead of feature-independent coin flips that stall
/// stage-2 training.
#[derive(Debug, Clone)]
pub struct BitMapper {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    proj: Conv2dLayer,
    pub c_in: usize,
    pub c_bits: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Current relaxation temperature (annealed during training).
    pub tau: f64,
}

pub struct BitMapperNodes {
    conv1: ConvNodes,
    conv2: ConvNodes,
    proj: ConvNodes,
}

const SEED_TAG_MAPPER: u64 = 0x4d415050; // "MAPP"

impl BitMapper {
    pub fn new(arch: &CodecArch, l_b: usize, seed: u64) -> Result<Self> {
        let grid = arch.latent_h() * arch.latent_w();
        if l_b == 0 || !l_b.is_multiple_of(grid) {
            return Err(Error::invalid(format!(
                "bit length {l_b} incompatible with the {}x{} feature grid",
                arch.latent_h(),
                arch.latent_w()
            )));
        }
        let c_in = arch.c_latent;
        let c_bits = l_b / grid;
        let mut rng = Rng::seed_from(substream(seed, SEED_TAG_MAPPER));
        let conv1 = Conv2dLayer::conv(c_in, c_in, 3, 1, 1, &mut rng);
        let mut conv2 = Conv2dLayer::conv(c_in, c_in, 3, 1, 1, &mut rng);
        // damp the refinement branch so the residual dominates at init
        for w in conv2.weight.values_mut() {
            *w *= 0.1;
        }
        let mut proj = Conv2dLayer::conv(c_in, 2 * c_bits, 1, 1, 0, &mut rng);
        // identity-binarizer start: logit0 plane c reads -z_c, logit1 +z_c
        if c_bits == c_in {
            for w in proj.weight.values_mut() {
                *w = 0.0;
            }
            for c in 0..c_in {
                proj.weight.values_mut()[c * c_in + c] = -1.0;
                proj.weight.values_mut()[(c_bits + c) * c_in + c] = 1.0;
            }
        }
        Ok(BitMapper {
            conv1,
            conv2,
            proj,
            c_in,
            c_bits,
            grid_h: arch.latent_h(),
            grid_w: arch.latent_w(),
            tau: 1.0,
        })
    }

    pub fn l_b(&self) -> usize {
        self.c_bits * self.grid_h * self.grid_w
    }

    pub fn register(&self, tape: &mut Tape) -> BitMapperNodes {
        BitMapperNodes {
            conv1: self.conv1.register(tape),
            conv2: self.conv2.register(tape),
            proj: self.proj.register(tape),
        }
    }

    /// Features [N, L_s] -> bit distributions [N, L_b, 2], rows normalized.
    pub fn generate_distribution(
        &self,
        tape: &mut Tape,
        nodes: &BitMapperNodes,
        z: NodeId,
    ) -> Result<NodeId> {
        let shape = tape.shape(z).to_vec();
        let l_s = self.c_in * self.grid_h * self.grid_w;
        if shape.len() != 2 || shape[1] != l_s {
            return Err(Error::ShapeMismatch {
                op: "generate_distribution",
                lhs: shape,
                rhs: vec![0, l_s],
            });
        }
        let n = shape[0];
        let spatial = tape.reshape(z, vec![n, self.c_in, self.grid_h, self.grid_w])?;
        let h1 = self.conv1.forward(tape, nodes.conv1, spatial)?;
        let h1 = tape.relu(h1);
        let h2 = self.conv2.forward(tape, nodes.conv2, h1)?;
        let h2 = tape.relu(h2);
        let mixed = tape.add(h2, spatial)?;
        // channels [0..c_bits) hold the bit-0 logit planes, [c_bits..2c_bits) bit-1
        let logits = self.proj.forward(tape, nodes.proj, mixed)?;
        let paired = tape.reshape(logits, vec![n, 2, self.l_b()])?;
        let rows = tape.transpose_last2(paired)?;
        tape.softmax_rows(rows, 2)
    }

    /// Hard bits on the forward path, relaxed-soft gradients on the backward
    /// path: `straight_through(gumbel_max bits, soft bit-1 probability)`.
    ///
    /// Returns the tape node ([N, L_b], values exactly 0 or 1) and the bits.
    pub fn sample_bits_st(
        &self,
        tape: &mut Tape,
        p_s: NodeId,
        noise: &GumbelNoise,
        tau: f64,
    ) -> Result<(NodeId, Vec<u8>)> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::invalid(format!("temperature {tau} must be positive")));
        }
        let shape = tape.shape(p_s).to_vec();
        if shape.last() != Some(&2) {
            return Err(Error::ShapeMismatch {
                op: "sample_bits_st",
                lhs: shape,
                rhs: vec![0, 2],
            });
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        if rows != noise.len() {
            return Err(Error::ShapeMismatch {
                op: "sample_bits_st",
                lhs: vec![rows, 2],
                rhs: vec![noise.len(), 2],
            });
        }

        // hard path: same scores as the relaxation, decided by argmax
        let p = BitDistribution::from_flat(tape.values(p_s))?;
        let (_, bits) = gumbel_max_sample(&p, noise);
        let bit_values: Vec<f64> = bits.iter().map(|&b| b as f64).collect();

        // soft path on the tape: softmax((log p + g) / tau), bit-1 column
        let g_node = tape.constant(shape.clone(), noise.flat());
        let log_p = tape.log(p_s);
        let perturbed = tape.add(log_p, g_node)?;
        let scaled = tape.scale(perturbed, 1.0 / tau)?;
        let relaxed = tape.softmax_rows(scaled, 2)?;
        let soft_bit = tape.select_last(relaxed, 1)?;

        let hard_shape = shape[..shape.len() - 1].to_vec();
        let hard = tape.constant(hard_shape, bit_values);
        let st = tape.straight_through(hard, soft_bit)?;
        Ok((st, bits))
    }

    pub fn absorb_grads(&mut self, tape: &Tape, nodes: &BitMapperNodes) -> Result<()> {
        self.conv1.absorb_grads(tape, nodes.conv1)?;
        self.conv2.absorb_grads(tape, nodes.conv2)?;
        self.proj.absorb_grads(tape, nodes.proj)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.proj.param_count()
    }

    pub fn macs_per_image(&self) -> usize {
        let (m1, h, w) = self.conv1.macs(self.grid_h, self.grid_w);
        let (m2, h, w) = self.conv2.macs(h, w);
        let (m3, _, _) = self.proj.macs(h, w);
        m1 + m2 + m3
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("mapper.conv1.weight".into(), &self.conv1.weight),
            ("mapper.conv1.bias".into(), &self.conv1.bias),
            ("mapper.conv2.weight".into(), &self.conv2.weight),
            ("mapper.conv2.bias".into(), &self.conv2.bias),
            ("mapper.proj.weight".into(), &self.proj.weight),
            ("mapper.proj.bias".into(), &self.proj.bias),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("mapper.conv1.weight".into(), &mut self.conv1.weight),
            ("mapper.conv1.bias".into(), &mut self.conv1.bias),
            ("mapper.conv2.weight".into(), &mut self.conv2.weight),
            ("mapper.conv2.bias".into(), &mut self.conv2.bias),
            ("mapper.proj.weight".into(), &mut self.proj.weight),
            ("mapper.proj.bias".into(), &mut self.proj.bias),
        ]
    }

    #[cfg(test)]
    fn zero_all_params(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
