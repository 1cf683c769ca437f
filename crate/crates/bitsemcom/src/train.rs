//! Two-stage training and channel evaluation.
//!
//! Stage 1 pretrains encoder and decoder over an error-free link: features
//! are squashed to [0, 1] by a sigmoid and fed straight to the decoder, so
//! the decoder's input domain matches what the digital link will produce.
//!
//! Stage 2 trains end to end through the channel. In soft mode the sampled
//! bits are modulated, sent through AWGN, and demodulated to posteriors; the
//! modem is bridged for gradients by a straight-through cut between the
//! received posterior P_b and the transmitted bit. In hard mode the whole
//! digital link is abstracted as a binary symmetric channel at the link's
//! bit error rate, again with a straight-through cut across the flips.
//!
//! The 1-bit baseline replaces the bit mapper with uniform quantization:
//! training dithers the sigmoid bottleneck with uniform noise, transmits the
//! rounded bits over the same link, and routes gradients onto the dithered
//! values through the same straight-through cut; inference rounds.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mapper::GumbelNoise;
use crate::metrics::{link_ber_for_training, psnr};
use crate::model::{Model, ModelKind};
use crate::modem::{
    bsc_transmit, hard_decide, send_over_awgn, soft_posterior, ChannelRealization, Constellation,
    DecisionMode, Modulation,
};
use crate::optim::{adam_step, scheduled_lr, AdamState};
use crate::rng::{substream, Rng};
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Soft,
    Hard,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Soft => "soft",
            TrainMode::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(TrainMode::Soft),
            "hard" => Ok(TrainMode::Hard),
            other => Err(Error::invalid(format!(
                "unknown decision mode `{other}` (expected soft or hard)"
            ))),
        }
    }

    pub fn decision(&self) -> DecisionMode {
        match self {
            TrainMode::Soft => DecisionMode::Soft,
            TrainMode::Hard => DecisionMode::Hard,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub train_snr_db: f64,
    pub mode: TrainMode,
    pub tau_start: f64,
    pub tau_end: f64,
    pub modulation: Modulation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            lr_decay: 0.9,
            lr_decay_epochs: 20,
            stage1_epochs: 20,
            stage2_epochs: 40,
            train_snr_db: 6.0,
            mode: TrainMode::Soft,
            tau_start: 5.0,
            tau_end: 0.5,
            modulation: Modulation::Qpsk,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_psnr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_logs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    /// Hard mode: bit flips observed / bits pushed through the BSC.
    pub flips_observed: u64,
    pub bits_total: u64,
    /// Soft mode: transmitted values that were not exactly 0 or 1 (must be 0).
    pub binary_violations: u64,
}

const TAG_STAGE1: u64 = 0x5354_4731;
const TAG_STAGE2: u64 = 0x5354_4732;
const TAG_VAL: u64 = 0x56414c;

/// Uniform-quantization forward of the 1-bit baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantPhase {
    Train,
    Infer,
}

/// Train phase: `z + u`, u uniform on (-0.5, 0.5) — values may leave [0, 1].
/// Infer phase: `round(z)` with ties to even, exactly binary.
pub fn quant1bit_forward(z: &[f64], phase: QuantPhase, rng: &mut Rng) -> Vec<f64> {
    match phase {
        QuantPhase::Train => z.iter().map(|v| v + rng.uniform() - 0.5).collect(),
        QuantPhase::Infer => z.iter().map(|v| v.round_ties_even()).collect(),
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    constellation: Constellation,
    channel: ChannelRealization,
    bsc_ber: f64,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig) -> Result<Self> {
        let constellation = Constellation::new(cfg.modulation);
        let channel = ChannelRealization::new(cfg.train_snr_db, cfg.mode.decision())?;
        let bsc_ber = match cfg.mode {
            TrainMode::Hard => {
                link_ber_for_training(cfg.modulation, cfg.train_snr_db, cfg.seed)?.min(0.5)
            }
            TrainMode::Soft => 0.0,
        };
        Ok(Trainer {
            cfg,
            constellation,
            channel,
            bsc_ber,
        })
    }
}

/// Relaxation temperature at a given point of stage 2 (exponential anneal).
pub fn tau_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return cfg.tau_end;
    }
    let t = step as f64 / (total_steps - 1) as f64;
    cfg.tau_start * (cfg.tau_end / cfg.tau_start).powf(t)
}

/// Stage 1: error-free pretraining of the codec with the MSE objective.
pub fn train_stage1(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_stage(model, train, val, cfg, Stage::One)
}

/// Stage 2: end-to-end training through the digital link.
///
/// Dispatches on the model kind and `cfg.mode`; requires a stage-1-trained
/// model for sensible results but does not enforce it.
pub fn train_stage2(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_stage(model, train, val, cfg, Stage::Two)
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    One,
    Two,
}

fn run_stage(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let epochs = match stage {
        Stage::One => cfg.stage1_epochs,
        Stage::Two => cfg.stage2_epochs,
    };
    let trainer = Trainer::new(cfg)?;
    let mut report = TrainReport::default();
    if epochs == 0 {
        return Ok(report);
    }

    let mut adam = AdamState::new(&model.param_sizes(), cfg.learning_rate);
    let stage_tag = match stage {
        Stage::One => TAG_STAGE1,
        Stage::Two => TAG_STAGE2,
    };
    let batch = cfg.batch_size.min(train.len()).max(1);
    let steps_per_epoch = (train.len() / batch).max(1);
    let total_steps = epochs * steps_per_epoch;
    let mut global_step = 0usize;

    for epoch in 0..epochs {
        adam.learning_rate = scheduled_lr(
            cfg.learning_rate,
            cfg.lr_decay,
            cfg.lr_decay_epochs,
            epoch,
        );
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = Rng::seed_from(substream(substream(cfg.seed, stage_tag), epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch).take(steps_per_epoch) {
            let mut step_rng = Rng::seed_from(substream(
                substream(cfg.seed, stage_tag ^ 0xba7c4),
                global_step as u64,
            ));
            if stage == Stage::Two && model.kind == ModelKind::BitSemCom {
                model.set_tau(tau_at(cfg, global_step, total_steps));
            }
            let loss = train_step(model, train, chunk, &trainer, stage, &mut step_rng, &mut report)?;
            if !loss.is_finite() {
                let tail: Vec<f64> = report
                    .step_losses
                    .iter()
                    .rev()
                    .take(20)
                    .rev()
                    .cloned()
                    .collect();
                eprintln!("loss trace before divergence: {tail:?}");
                return Err(Error::Diverged {
                    step: global_step,
                    loss,
                });
            }
            report.step_losses.push(loss);
            epoch_loss += loss;

            let mut refs = model.named_tensors_mut();
            let mut params: Vec<&mut crate::tensor::Tensor> =
                refs.iter_mut().map(|(_, t)| &mut **t).collect();
            adam_step(&mut params, &mut adam)?;
            global_step += 1;
        }

        let val_psnr = match stage {
            Stage::One => evaluate_error_free(model, val)?,
            Stage::Two => {
                evaluate_over_channel(
                    model,
                    val,
                    cfg.modulation,
                    cfg.train_snr_db,
                    cfg.mode.decision(),
                    substream(cfg.seed, TAG_VAL),
                )?
                .psnr_db
            }
        };
        report.epoch_logs.push(EpochLog {
            epoch,
            lr: adam.learning_rate,
            train_mse: epoch_loss / steps_per_epoch as f64,
            val_psnr,
        });
    }
    Ok(report)
}

fn train_step(
    model: &mut Model,
    data: &Dataset,
    indices: &[usize],
    trainer: &Trainer,
    stage: Stage,
    rng: &mut Rng,
    report: &mut TrainReport,
) -> Result<f64> {
    let batch = data.batch(indices);
    let n = batch.n;
    let l_b = model.l_b();

    let mut tape = Tape::new();
    let codec_nodes = model.codec.register(&mut tape);
    let mapper_nodes = model.mapper.as_ref().map(|m| m.register(&mut tape));
    let x = model.codec.input_node(&mut tape, &batch)?;
    let z = model.codec.encode(&mut tape, &codec_nodes, x)?;

    let decoder_input: NodeId = match (stage, model.kind) {
        // error-free pretraining is identical for both systems: the
        // sigmoid-squashed features go straight to the decoder
        (Stage::One, _) => tape.sigmoid(z),
        (Stage::Two, ModelKind::BitSemCom) => {
            let mapper = model.mapper.as_ref().expect("bitsemcom has a mapper");
            let p_s = mapper.generate_distribution(&mut tape, mapper_nodes.as_ref().unwrap(), z)?;
            let noise = GumbelNoise::sample(n * l_b, rng);
            let (b_st, bits) = mapper.sample_bits_st(&mut tape, p_s, &noise, mapper.tau)?;

            // instrumentation: the modem must only ever see binary values
            report.binary_violations += tape
                .values(b_st)
                .iter()
                .filter(|&&v| v != 0.0 && v != 1.0)
                .count() as u64;

            let received = transmit_for_training(&bits, n, l_b, trainer, rng, report)?;
            let r_node = tape.constant(vec![n, l_b], received);
            tape.straight_through(r_node, b_st)?
        }
        (Stage::Two, ModelKind::DeepJscc1Bit) => {
            // dithered rounding: round(z + u) is a genuine bit, the uniform
            // noise z + u is the gradient surrogate behind the same
            // straight-through cut the mapper uses
            let s = tape.sigmoid(z);
            let noisy = quant1bit_forward(tape.values(s), QuantPhase::Train, rng);
            let delta: Vec<f64> = noisy
                .iter()
                .zip(tape.values(s))
                .map(|(a, b)| a - b)
                .collect();
            let u = tape.constant(vec![n, l_b], delta);
            let z_hat = tape.add(s, u)?;
            let bits: Vec<u8> = tape
                .values(z_hat)
                .iter()
                .map(|v| v.round_ties_even().clamp(0.0, 1.0) as u8)
                .collect();
            let received = transmit_for_training(&bits, n, l_b, trainer, rng, report)?;
            let r_node = tape.constant(vec![n, l_b], received);
            tape.straight_through(r_node, z_hat)?
        }
    };

    let x_hat = model.codec.decode(&mut tape, &codec_nodes, decoder_input)?;
    let loss = tape.mse(x_hat, x)?;
    let loss_value = tape.values(loss)[0];
    tape.backward(loss)?;
    model.codec.absorb_grads(&tape, &codec_nodes)?;
    if let (Some(m), Some(nodes)) = (&mut model.mapper, &mapper_nodes) {
        m.absorb_grads(&tape, nodes)?;
    }
    Ok(loss_value)
}

/// Push batch bit rows through the configured link; returns decoder-side
/// values (posteriors in soft mode, received bits in hard mode).
fn transmit_for_training(
    bits: &[u8],
    n: usize,
    l_b: usize,
    trainer: &Trainer,
    rng: &mut Rng,
    report: &mut TrainReport,
) -> Result<Vec<f64>> {
    debug_assert_eq!(bits.len(), n * l_b);
    let mut received = Vec::with_capacity(n * l_b);
    match trainer.cfg.mode {
        TrainMode::Soft => {
            for row in bits.chunks(l_b) {
                let llr = send_over_awgn(row, &trainer.constellation, &trainer.channel, rng)?;
                received.extend(soft_posterior(&llr));
            }
        }
        TrainMode::Hard => {
            for row in bits.chunks(l_b) {
                let flipped = bsc_transmit(row, trainer.bsc_ber, rng)?;
                report.flips_observed += flipped
                    .iter()
                    .zip(row)
                    .filter(|(a, b)| a != b)
                    .count() as u64;
                report.bits_total += row.len() as u64;
                received.extend(flipped.iter().map(|&b| b as f64));
            }
        }
    }
    Ok(received)
}

/// Mean PSNR through the stage-1 identity link (sigmoid-squashed features).
pub fn evaluate_error_free(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation dataset is empty"));
    }
    let mut total = 0.0;
    for start in (0..data.len()).step_by(16) {
        let indices: Vec<usize> = (start..(start + 16).min(data.len())).collect();
        let batch = data.batch(&indices);
        let mut tape = Tape::new();
        let nodes = model.codec.register(&mut tape);
        let x = model.codec.input_node(&mut tape, &batch)?;
        let z = model.codec.encode(&mut tape, &nodes, x)?;
        let s = tape.sigmoid(z);
        let x_hat = model.codec.decode(&mut tape, &nodes, s)?;
        let img_len = 3 * batch.h * batch.w;
        for (i, _) in indices.iter().enumerate() {
            total += psnr(
                &tape.values(x_hat)[i * img_len..][..img_len],
                batch.image(i),
            )?;
        }
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub psnr_db: f64,
    pub ber: f64,
    pub n_images: usize,
}

/// Full digital pipeline evaluation at one SNR.
///
/// Per image: sample bits (Gumbel-Max for the mapper, rounding for the
/// baseline), modulate, AWGN, exact LLR, then decode from posteriors (soft)
/// or hard decisions. The reported BER is the observed flip rate of the
/// hard-decided link bits. Per-image noise comes from `substream(seed, i)`,
/// so results are independent of batching and thread scheduling.
pub fn evaluate_over_channel(
    model: &Model,
    data: &Dataset,
    modulation: Modulation,
    snr_db: f64,
    decision: DecisionMode,
    seed: u64,
) -> Result<EvalOutcome> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation dataset is empty"));
    }
    if matches!(decision, DecisionMode::Bsc { .. }) {
        return Err(Error::invalid(
            "channel evaluation runs the real modem; BSC is a training abstraction",
        ));
    }
    let constellation = Constellation::new(modulation);
    let ch = ChannelRealization::new(snr_db, decision)?;
    let l_b = model.l_b();
    let mut total_psnr = 0.0;
    let mut bit_errors = 0usize;
    let mut bits_seen = 0usize;

    for start in (0..data.len()).step_by(16) {
        let indices: Vec<usize> = (start..(start + 16).min(data.len())).collect();
        let batch = data.batch(&indices);
        let n = batch.n;
        let mut tape = Tape::new();
        let codec_nodes = model.codec.register(&mut tape);
        let x = model.codec.input_node(&mut tape, &batch)?;
        let z = model.codec.encode(&mut tape, &codec_nodes, x)?;

        // transmitted bits per image
        let tx_rows: Vec<Vec<u8>> = match model.kind {
            ModelKind::BitSemCom => {
                let mapper = model.mapper.as_ref().expect("bitsemcom has a mapper");
                let mapper_nodes = mapper.register(&mut tape);
                let p_s = mapper.generate_distribution(&mut tape, &mapper_nodes, z)?;
                let p_vals = tape.values(p_s).to_vec();
                indices
                    .iter()
                    .enumerate()
                    .map(|(i, &img)| {
                        let rows = crate::mapper::BitDistribution::from_flat(
                            &p_vals[i * l_b * 2..][..l_b * 2],
                        )?;
                        let mut g_rng = Rng::seed_from(substream(seed, 2 * img as u64));
                        let g = GumbelNoise::sample(l_b, &mut g_rng);
                        Ok(crate::mapper::gumbel_max_sample(&rows, &g).1)
                    })
                    .collect::<Result<_>>()?
            }
            ModelKind::DeepJscc1Bit => {
                let s = tape.sigmoid(z);
                let s_vals = tape.values(s);
                indices
                    .iter()
                    .enumerate()
                    .map(|(i, _)| {
                        let mut dummy = Rng::seed_from(0);
                        quant1bit_forward(&s_vals[i * l_b..][..l_b], QuantPhase::Infer, &mut dummy)
                            .iter()
                            .map(|&v| v as u8)
                            .collect()
                    })
                    .collect()
            }
        };

        // per-image digital hop
        let mut decoder_rows = Vec::with_capacity(n * l_b);
        for (i, &img) in indices.iter().enumerate() {
            let mut ch_rng = Rng::seed_from(substream(seed, 2 * img as u64 + 1));
            let llr = send_over_awgn(&tx_rows[i], &constellation, &ch, &mut ch_rng)?;
            let decided = hard_decide(&llr);
            bit_errors += decided
                .iter()
                .zip(&tx_rows[i])
                .filter(|(a, b)| a != b)
                .count();
            bits_seen += l_b;
            match decision {
                DecisionMode::Soft => decoder_rows.extend(soft_posterior(&llr)),
                DecisionMode::Hard => decoder_rows.extend(decided.iter().map(|&b| b as f64)),
                DecisionMode::Bsc { .. } => unreachable!(),
            }
        }

        let input = tape.constant(vec![n, l_b], decoder_rows);
        let x_hat = model.codec.decode(&mut tape, &codec_nodes, input)?;
        let img_len = 3 * batch.h * batch.w;
        for i in 0..n {
            total_psnr += psnr(
                &tape.values(x_hat)[i * img_len..][..img_len],
                batch.image(i),
            )?;
        }
    }

    Ok(EvalOutcome {
        psnr_db: total_psnr / data.len() as f64,
        ber: bit_errors as f64 / bits_seen as f64,
        n_images: data.len(),
    })
}
