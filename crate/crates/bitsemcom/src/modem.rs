//! Digital modulation, AWGN channel, and exact per-bit LLR demodulation.
//!
//! Conventions, stated once and used everywhere:
//! - SNR is Es/N0 in dB with unit mean symbol energy, so the per-real-dimension
//!   noise variance is `sigma^2 = 10^(-snr_db/10) / 2`.
//! - Bit 1 maps to the positive amplitude, so an LLR
//!   `delta_i = ln P(b_i=1|r) / P(b_i=0|r)` is positive when bit 1 is favored.
//! - LLRs are clamped to [-40, 40]; the sigmoid saturates far below that.
//! - A zero LLR (exact tie) hard-decides to bit 0.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::sigmoid_scalar;

pub const LLR_CLAMP: f64 = 40.0;

/// One complex channel use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iq {
    pub re: f64,
    pub im: f64,
}

impl Iq {
    pub fn new(re: f64, im: f64) -> Self {
        Iq { re, im }
    }

    #[inline]
    pub fn dist_sq(&self, other: &Iq) -> f64 {
        let dr = self.re - other.re;
        let di = self.im - other.im;
        dr * dr + di * di
    }

    #[inline]
    pub fn energy(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn order(&self) -> usize {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
            Modulation::Qam16 => 16,
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            "qam16" | "16qam" => Ok(Modulation::Qam16),
            other => Err(Error::invalid(format!(
                "unknown modulation `{other}` (expected bpsk, qpsk, or qam16)"
            ))),
        }
    }
}

/// Symbol set with Gray bit labels and unit mean energy.
#[derive(Debug, Clone)]
pub struct Constellation {
    modulation: Modulation,
    /// Symbol for each label value; index is the label bits read MSB-first.
    symbols: Vec<Iq>,
    /// labels[i][j] is bit j of symbol i (transmitted order).
    labels: Vec<Vec<u8>>,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        match modulation {
            Modulation::Bpsk => {
                let symbols = vec![Iq::new(-1.0, 0.0), Iq::new(1.0, 0.0)];
                let labels = vec![vec![0], vec![1]];
                Constellation {
                    modulation,
                    symbols,
                    labels,
                }
            }
            Modulation::Qpsk => {
                // first bit -> I, second bit -> Q; bit 1 -> +1/sqrt(2)
                let a = std::f64::consts::FRAC_1_SQRT_2;
                let mut symbols = Vec::with_capacity(4);
                let mut labels = Vec::with_capacity(4);
                for b0 in 0..2u8 {
                    for b1 in 0..2u8 {
                        symbols.push(Iq::new(amp(b0, a), amp(b1, a)));
                        labels.push(vec![b0, b1]);
                    }
                }
                Constellation {
                    modulation,
                    symbols,
                    labels,
                }
            }
            Modulation::Qam16 => {
                // two Gray-coded 4-PAM components: bits (b0,b1) -> I, (b2,b3) -> Q
                let a = 1.0 / 10.0f64.sqrt();
                let mut symbols = Vec::with_capacity(16);
                let mut labels = Vec::with_capacity(16);
                for b0 in 0..2u8 {
                    for b1 in 0..2u8 {
                        for b2 in 0..2u8 {
                            for b3 in 0..2u8 {
                                symbols.push(Iq::new(pam4(b0, b1, a), pam4(b2, b3, a)));
                                labels.push(vec![b0, b1, b2, b3]);
                            }
                        }
                    }
                }
                Constellation {
                    modulation,
                    symbols,
                    labels,
                }
            }
        }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn order(&self) -> usize {
        self.symbols.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.modulation.bits_per_symbol()
    }

    pub fn symbols(&self) -> &[Iq] {
        &self.symbols
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    pub fn mean_energy(&self) -> f64 {
        self.symbols.iter().map(Iq::energy).sum::<f64>() / self.symbols.len() as f64
    }

    /// Exhaustive Gray check: every minimum-distance pair differs in one bit.
    pub fn is_gray(&self) -> bool {
        let mut min_d = f64::INFINITY;
        for i in 0..self.symbols.len() {
            for j in (i + 1)..self.symbols.len() {
                let d = self.symbols[i].dist_sq(&self.symbols[j]);
                if d < min_d {
                    min_d = d;
                }
            }
        }
        for i in 0..self.symbols.len() {
            for j in (i + 1)..self.symbols.len() {
                let d = self.symbols[i].dist_sq(&self.symbols[j]);
                if (d - min_d).abs() < 1e-9 {
                    let hamming: usize = self.labels[i]
                        .iter()
                        .zip(&self.labels[j])
                        .filter(|(x, y)| x != y)
                        .count();
                    if hamming != 1 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

#[inline]
fn amp(bit: u8, a: f64) -> f64 {
    if bit == 1 {
        a
    } else {
        -a
    }
}

#[inline]
fn pam4(b_hi: u8, b_lo: u8, a: f64) -> f64 {
    // Gray over 4 levels: 00 -> -3a, 01 -> -a, 11 -> +a, 10 -> +3a
    match (b_hi, b_lo) {
        (0, 0) => -3.0 * a,
        (0, 1) => -a,
        (1, 1) => a,
        _ => 3.0 * a,
    }
}

/// How the receiver turns the analog observation into decoder input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionMode {
    /// Posterior probabilities via the sigmoid of each LLR.
    Soft,
    /// Sign threshold on each LLR.
    Hard,
    /// The whole digital link abstracted as i.i.d. bit flips.
    Bsc { ber: f64 },
}

impl DecisionMode {
    pub fn name(&self) -> &'static str {
        match self {
            DecisionMode::Soft => "soft",
            DecisionMode::Hard => "hard",
            DecisionMode::Bsc { .. } => "bsc",
        }
    }
}

/// SNR point plus the derived noise variance and decision rule.
#[derive(Debug, Clone, Copy)]
pub struct ChannelRealization {
    pub snr_db: f64,
    pub sigma2_per_dim: f64,
    pub mode: DecisionMode,
}

impl ChannelRealization {
    /// `snr_db` is Es/N0; `f64::INFINITY` is the noise-free sentinel.
    pub fn new(snr_db: f64, mode: DecisionMode) -> Result<Self> {
        if snr_db.is_nan() {
            return Err(Error::invalid("snr_db is NaN"));
        }
        if let DecisionMode::Bsc { ber } = mode {
            if !(0.0..=0.5).contains(&ber) {
                return Err(Error::invalid(format!(
                    "BSC bit error rate {ber} outside [0, 0.5]"
                )));
            }
        }
        let sigma2_per_dim = if snr_db.is_infinite() {
            0.0
        } else {
            10f64.powf(-snr_db / 10.0) / 2.0
        };
        Ok(ChannelRealization {
            snr_db,
            sigma2_per_dim,
            mode,
        })
    }
}

/// Clamped per-bit log-likelihood ratios, sign convention "positive favors 1".
#[derive(Debug, Clone, PartialEq)]
pub struct LlrVector(Vec<f64>);

impl LlrVector {
    pub fn from_raw(mut llrs: Vec<f64>) -> Self {
        for v in llrs.iter_mut() {
            *v = v.clamp(-LLR_CLAMP, LLR_CLAMP);
        }
        LlrVector(llrs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Drop trailing entries that came from pad bits.
    pub fn truncate(&mut self, len: usize) {
        self.0.truncate(len);
    }
}

/// Map a bit sequence onto constellation symbols.
///
/// If the length is not a multiple of bits-per-symbol the tail is padded with
/// zero bits; the returned count lets the receiver discard the pad LLRs.
pub fn modulate(bits: &[u8], c: &Constellation) -> (Vec<Iq>, usize) {
    let k = c.bits_per_symbol();
    let pad = (k - bits.len() % k) % k;
    let n_sym = (bits.len() + pad) / k;
    let mut symbols = Vec::with_capacity(n_sym);
    for s in 0..n_sym {
        let mut index = 0usize;
        for j in 0..k {
            let bit = bits.get(s * k + j).copied().unwrap_or(0);
            debug_assert!(bit <= 1, "modulate expects bits in {{0,1}}");
            index = (index << 1) | bit as usize;
        }
        symbols.push(c.symbols[index]);
    }
    (symbols, pad)
}

/// Add white Gaussian noise with `sigma2_per_dim` variance per real dimension.
pub fn awgn(symbols: &[Iq], ch: &ChannelRealization, rng: &mut Rng) -> Result<Vec<Iq>> {
    if matches!(ch.mode, DecisionMode::Bsc { .. }) {
        return Err(Error::invalid(
            "awgn called on a channel configured as a binary symmetric abstraction",
        ));
    }
    let sigma = ch.sigma2_per_dim.sqrt();
    Ok(symbols
        .iter()
        .map(|s| Iq::new(s.re + sigma * rng.gaussian(), s.im + sigma * rng.gaussian()))
        .collect())
}

/// Exact per-bit LLRs by constellation enumeration with log-sum-exp.
///
/// For each received symbol and each bit position i:
/// `delta_i = LSE_{s: bit_i=1} (-|r-s|^2 / 2s2) - LSE_{s: bit_i=0} (-|r-s|^2 / 2s2)`.
pub fn demodulate_llr(received: &[Iq], c: &Constellation, ch: &ChannelRealization) -> LlrVector {
    let sigma2 = ch.sigma2_per_dim.max(1e-30);
    let k = c.bits_per_symbol();
    let m = c.order();
    let mut llrs = Vec::with_capacity(received.len() * k);
    let mut scores = vec![0.0f64; m];
    for r in received {
        for (idx, s) in c.symbols.iter().enumerate() {
            scores[idx] = -r.dist_sq(s) / (2.0 * sigma2);
        }
        for bit in 0..k {
            let mut max1 = f64::NEG_INFINITY;
            let mut max0 = f64::NEG_INFINITY;
            for (idx, &score) in scores.iter().enumerate() {
                if c.labels[idx][bit] == 1 {
                    max1 = max1.max(score);
                } else {
                    max0 = max0.max(score);
                }
            }
            let mut sum1 = 0.0;
            let mut sum0 = 0.0;
            for (idx, score) in scores.iter().enumerate() {
                if c.labels[idx][bit] == 1 {
                    sum1 += (score - max1).exp();
                } else {
                    sum0 += (score - max0).exp();
                }
            }
            llrs.push((max1 + sum1.ln()) - (max0 + sum0.ln()));
        }
    }
    LlrVector::from_raw(llrs)
}

/// Sign threshold: positive LLR decides 1, zero and negative decide 0.
pub fn hard_decide(llr: &LlrVector) -> Vec<u8> {
    llr.as_slice().iter().map(|&d| u8::from(d > 0.0)).collect()
}

/// Posterior probability of bit 1 for each LLR.
pub fn soft_posterior(llr: &LlrVector) -> Vec<f64> {
    llr.as_slice().iter().map(|&d| sigmoid_scalar(d)).collect()
}

/// Flip each bit independently with probability `ber`.
pub fn bsc_transmit(bits: &[u8], ber: f64, rng: &mut Rng) -> Result<Vec<u8>> {
    if !(0.0..=0.5).contains(&ber) {
        return Err(Error::invalid(format!(
            "BSC bit error rate {ber} outside [0, 0.5]"
        )));
    }
    Ok(bits
        .iter()
        .map(|&b| if rng.flip(ber) { 1 - b } else { b })
        .collect())
}

/// Closed-form Gray-mapped BER for BPSK/QPSK: Q(sqrt(2 Eb/N0)).
///
/// 16-QAM is not supported analytically here; estimate it by Monte Carlo.
pub fn analytic_ber(c: &Constellation, snr_db: f64) -> Result<f64> {
    match c.modulation {
        Modulation::Bpsk | Modulation::Qpsk => {
            if snr_db.is_infinite() && snr_db > 0.0 {
                return Ok(0.0);
            }
            let es_n0 = 10f64.powf(snr_db / 10.0);
            let eb_n0 = es_n0 / c.bits_per_symbol() as f64;
            Ok(q_function((2.0 * eb_n0).sqrt()))
        }
        Modulation::Qam16 => Err(Error::Unsupported(
            "analytic BER for qam16; use a Monte Carlo estimate".into(),
        )),
    }
}

/// Gaussian tail probability Q(x) = 0.5 erfc(x / sqrt(2)).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Complementary error function, |relative error| < 1.2e-7.
pub fn erfc(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.5 * x.abs());
    let tau = t
        * (-x * x - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        tau
    } else {
        2.0 - tau
    }
}

/// Full digital hop: modulate, add noise, demodulate, strip pad LLRs.
pub fn send_over_awgn(
    bits: &[u8],
    c: &Constellation,
    ch: &ChannelRealization,
    rng: &mut Rng,
) -> Result<LlrVector> {
    let (symbols, _pad) = modulate(bits, c);
    let received = awgn(&symbols, ch, rng)?;
    let mut llrs = demodulate_llr(&received, c, ch);
    llrs.truncate(bits.len());
    Ok(llrs)
}
