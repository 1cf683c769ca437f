//! The two trainable systems under comparison.
//!
//! `BitSemCom` pairs the codec with the learnable bit mapper. The
//! `DeepJscc1Bit` baseline keeps the identical codec, squashes the bottleneck
//! through a sigmoid, and digitizes by rounding (approximated with uniform
//! noise during training) — no extra parameters.

use crate::codec::{Codec, CodecArch};
use crate::error::{Error, Result};
use crate::mapper::BitMapper;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    BitSemCom,
    DeepJscc1Bit,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::BitSemCom => "bitsemcom",
            ModelKind::DeepJscc1Bit => "deepjscc-1bit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bitsemcom" => Ok(ModelKind::BitSemCom),
            "deepjscc-1bit" => Ok(ModelKind::DeepJscc1Bit),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub codec: Codec,
    /// Present iff `kind == BitSemCom`.
    pub mapper: Option<BitMapper>,
}

impl Model {
    pub fn bitsemcom(arch: CodecArch, l_b: usize, seed: u64) -> Result<Self> {
        let codec = Codec::new(arch, seed);
        let mapper = BitMapper::new(&arch, l_b, seed)?;
        Ok(Model {
            kind: ModelKind::BitSemCom,
            codec,
            mapper: Some(mapper),
        })
    }

    /// The baseline's bottleneck width is the latent itself, so `l_b` must
    /// equal the flattened feature length.
    pub fn deepjscc_1bit(arch: CodecArch, l_b: usize, seed: u64) -> Result<Self> {
        if l_b != arch.feature_len() {
            return Err(Error::invalid(format!(
                "1-bit baseline needs l_b = {} (the bottleneck width), got {l_b}",
                arch.feature_len()
            )));
        }
        Ok(Model {
            kind: ModelKind::DeepJscc1Bit,
            codec: Codec::new(arch, seed),
            mapper: None,
        })
    }

    pub fn new(kind: ModelKind, arch: CodecArch, l_b: usize, seed: u64) -> Result<Self> {
        match kind {
            ModelKind::BitSemCom => Model::bitsemcom(arch, l_b, seed),
            ModelKind::DeepJscc1Bit => Model::deepjscc_1bit(arch, l_b, seed),
        }
    }

    pub fn l_b(&self) -> usize {
        match &self.mapper {
            Some(m) => m.l_b(),
            None => self.codec.arch.feature_len(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.codec.named_tensors();
        if let Some(m) = &self.mapper {
            out.extend(m.named_tensors());
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.codec.named_tensors_mut();
        if let Some(m) = &mut self.mapper {
            out.extend(m.named_tensors_mut());
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named_tensors().iter().map(|(_, t)| t.numel()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn tau(&self) -> f64 {
        self.mapper.as_ref().map(|m| m.tau).unwrap_or(1.0)
    }

    pub fn set_tau(&mut self, tau: f64) {
        if let Some(m) = &mut self.mapper {
            m.tau = tau;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> CodecArch {
        CodecArch::new(32, 32, 8, 4).unwrap()
    }

    #[test]
    fn baseline_has_exactly_the_codec_params() {
        let b = Model::deepjscc_1bit(arch(), 256, 1).unwrap();
        let c = Codec::new(arch(), 1);
        assert_eq!(b.param_count(), c.param_count());
    }

    #[test]
    fn bitsemcom_adds_exactly_the_mapper_params() {
        let m = Model::bitsemcom(arch(), 256, 1).unwrap();
        let mapper_count = m.mapper.as_ref().unwrap().param_count();
        assert_eq!(m.param_count(), m.codec.param_count() + mapper_count);
    }

    #[test]
    fn baseline_bottleneck_width_is_checked() {
        assert!(Model::deepjscc_1bit(arch(), 128, 1).is_err());
    }
}
