//! Quality and link metrics: PSNR, channel uses per pixel, Monte Carlo BER.

use crate::error::{Error, Result};
use crate::modem::{
    analytic_ber, hard_decide, send_over_awgn, ChannelRealization, Constellation, DecisionMode,
    Modulation,
};
use crate::rng::{substream, Rng};

/// PSNR in dB for [0, 1]-valued signals, accumulated in double precision.
/// Zero MSE is reported as the 100 dB cap; nothing exceeds the cap.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Channel uses per pixel: `L_b / (log2(M) * H * W)`.
///
/// `l_b` must be divisible by the bits per symbol so the symbol count is
/// integral; `l_b = 0` is allowed and yields 0.
pub fn cpp_of(l_b: usize, modulation: Modulation, h: usize, w: usize) -> Result<f64> {
    let k = modulation.bits_per_symbol();
    if !l_b.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "bit count {l_b} is not divisible by {k} bits per {} symbol",
            modulation.name()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("image geometry must be positive"));
    }
    Ok((l_b / k) as f64 / (h * w) as f64)
}

/// Derive the latent channel depth from a target cpp. Rejects combinations
/// that do not produce an integral bit length and channel count.
pub fn latent_channels_for_cpp(
    cpp: f64,
    modulation: Modulation,
    h: usize,
    w: usize,
    downsample: usize,
) -> Result<(usize, usize)> {
    let k = modulation.bits_per_symbol() as f64;
    let l_b_f = cpp * (h * w) as f64 * k;
    let l_b = l_b_f.round() as usize;
    if l_b == 0 || (l_b_f - l_b as f64).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "cpp {cpp} with {} over {h}x{w} gives non-integral bit count {l_b_f}",
            modulation.name()
        )));
    }
    let grid = (h / downsample) * (w / downsample);
    if grid == 0 || !l_b.is_multiple_of(grid) {
        return Err(Error::invalid(format!(
            "bit count {l_b} does not divide the {}x{} feature grid",
            h / downsample,
            w / downsample
        )));
    }
    Ok((l_b / grid, l_b))
}

#[derive(Debug, Clone, Copy)]
pub struct BerEstimate {
    pub ber: f64,
    pub n_bits: usize,
    pub n_errors: usize,
}

impl BerEstimate {
    /// Standard error of the Monte Carlo estimate.
    pub fn standard_error(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.n_bits as f64).sqrt()
    }
}

/// Monte Carlo BER of the uncoded chain
/// modulate -> AWGN -> exact LLR -> hard decision, on random bits.
pub fn measure_ber(
    modulation: Modulation,
    snr_db: f64,
    n_bits: usize,
    seed: u64,
) -> Result<BerEstimate> {
    if n_bits < 10_000 {
        return Err(Error::invalid(format!(
            "BER measurement needs at least 10000 bits, got {n_bits}"
        )));
    }
    let c = Constellation::new(modulation);
    let ch = ChannelRealization::new(snr_db, DecisionMode::Hard)?;
    let mut rng = Rng::seed_from(substream(seed, 0x42_4552));
    let frame = 8192usize;
    let mut sent = 0usize;
    let mut errors = 0usize;
    let mut bits = vec![0u8; frame];
    while sent < n_bits {
        let take = frame.min(n_bits - sent);
        for b in bits[..take].iter_mut() {
            *b = (rng.next_u64() & 1) as u8;
        }
        let llr = send_over_awgn(&bits[..take], &c, &ch, &mut rng)?;
        let decided = hard_decide(&llr);
        errors += decided
            .iter()
            .zip(&bits[..take])
            .filter(|(a, b)| a != b)
            .count();
        sent += take;
    }
    Ok(BerEstimate {
        ber: errors as f64 / sent as f64,
        n_bits: sent,
        n_errors: errors,
    })
}

/// BER of the digital link used when training abstracts it as a BSC:
/// closed form where available, Monte Carlo otherwise.
pub fn link_ber_for_training(modulation: Modulation, snr_db: f64, seed: u64) -> Result<f64> {
    let c = Constellation::new(modulation);
    match analytic_ber(&c, snr_db) {
        Ok(ber) => Ok(ber),
        Err(Error::Unsupported(_)) => Ok(measure_ber(modulation, snr_db, 1_000_000, seed)?.ber),
        Err(e) => Err(e),
    }
}
