//! Experiment orchestration: config files, training runs, SNR sweeps,
//! result persistence, and the overhead report.
//!
//! Config files are flat `key = value` text; unknown keys are rejected so a
//! typo cannot silently change an experiment. Sweep points run data-parallel
//! with per-point RNG streams and are merged in (snr, model) order, so
//! `results.csv` is byte-identical across runs of the same config and seed.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::thread;

use crate::checkpoint;
use crate::codec::{CodecArch, DOWNSAMPLE};
use crate::data::{ingest_dataset, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::mapper::BitMapper;
use crate::metrics::{cpp_of, latent_channels_for_cpp, measure_ber};
use crate::model::{Model, ModelKind};
use crate::modem::{analytic_ber, Constellation, Modulation};
use crate::rng::substream;
use crate::train::{
    evaluate_over_channel, train_stage1, train_stage2, EpochLog, TrainConfig, TrainMode,
};

const TAG_DATA_TRAIN: u64 = 0x00da_7a01;
const TAG_DATA_VAL: u64 = 0x00da_7a02;
const TAG_DATA_TEST: u64 = 0x00da_7a03;
const TAG_MODEL: u64 = 0x0de1;
const TAG_SWEEP: u64 = 0x0053_7765;

pub const RESULTS_CSV_HEADER: &str = "snr_db,cpp,modulation,mode,model,psnr_db,ber,n_images,seed";

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub val_images: usize,
    pub test_images: usize,
    pub height: usize,
    pub width: usize,
    pub modulation: Modulation,
    pub cpp: f64,
    pub snr_grid: Vec<f64>,
    pub mode: TrainMode,
    pub codec_width: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub train_snr_db: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut dataset = None;
        let mut val_images = 16usize;
        let mut test_images = 32usize;
        let mut height = None;
        let mut width = None;
        let mut modulation = None;
        let mut cpp = None;
        let mut snr_grid: Option<Vec<f64>> = None;
        let mut mode = TrainMode::Soft;
        let mut codec_width = 16usize;
        let defaults = TrainConfig::default();
        let mut batch_size = defaults.batch_size;
        let mut learning_rate = defaults.learning_rate;
        let mut lr_decay = defaults.lr_decay;
        let mut lr_decay_epochs = defaults.lr_decay_epochs;
        let mut stage1_epochs = defaults.stage1_epochs;
        let mut stage2_epochs = defaults.stage2_epochs;
        let mut train_snr_db = defaults.train_snr_db;
        let mut tau_start = defaults.tau_start;
        let mut tau_end = defaults.tau_end;
        let mut out_dir = PathBuf::from("runs/out");
        let mut seed = 7u64;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what}: `{value}`", lineno + 1));
            match key {
                "dataset" => dataset = Some(DatasetSpec::parse(value)?),
                "val_images" => val_images = value.parse().map_err(|_| bad("val_images"))?,
                "test_images" => test_images = value.parse().map_err(|_| bad("test_images"))?,
                "height" => height = Some(value.parse().map_err(|_| bad("height"))?),
                "width" => width = Some(value.parse().map_err(|_| bad("width"))?),
                "modulation" => modulation = Some(Modulation::parse(value)?),
                "cpp" => cpp = Some(parse_cpp(value)?),
                "snr_grid" => {
                    let grid: Vec<f64> = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("snr_grid"))?;
                    if grid.is_empty() {
                        return Err(Error::Config("snr_grid must be nonempty".into()));
                    }
                    snr_grid = Some(grid);
                }
                "mode" => mode = TrainMode::parse(value)?,
                "codec_width" => codec_width = value.parse().map_err(|_| bad("codec_width"))?,
                "batch_size" => batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "learning_rate" => learning_rate = value.parse().map_err(|_| bad("learning_rate"))?,
                "lr_decay" => lr_decay = value.parse().map_err(|_| bad("lr_decay"))?,
                "lr_decay_epochs" => {
                    lr_decay_epochs = value.parse().map_err(|_| bad("lr_decay_epochs"))?
                }
                "stage1_epochs" => stage1_epochs = value.parse().map_err(|_| bad("stage1_epochs"))?,
                "stage2_epochs" => stage2_epochs = value.parse().map_err(|_| bad("stage2_epochs"))?,
                "train_snr_db" => train_snr_db = value.parse().map_err(|_| bad("train_snr_db"))?,
                "tau_start" => tau_start = value.parse().map_err(|_| bad("tau_start"))?,
                "tau_end" => tau_end = value.parse().map_err(|_| bad("tau_end"))?,
                "out_dir" => out_dir = PathBuf::from(value),
                "seed" => seed = value.parse().map_err(|_| bad("seed"))?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }

        let cfg = ExperimentConfig {
            dataset: dataset.ok_or_else(|| Error::Config("missing key `dataset`".into()))?,
            val_images,
            test_images,
            height: height.ok_or_else(|| Error::Config("missing key `height`".into()))?,
            width: width.ok_or_else(|| Error::Config("missing key `width`".into()))?,
            modulation: modulation.ok_or_else(|| Error::Config("missing key `modulation`".into()))?,
            cpp: cpp.ok_or_else(|| Error::Config("missing key `cpp`".into()))?,
            snr_grid: snr_grid.ok_or_else(|| Error::Config("missing key `snr_grid`".into()))?,
            mode,
            codec_width,
            batch_size,
            learning_rate,
            lr_decay,
            lr_decay_epochs,
            stage1_epochs,
            stage2_epochs,
            train_snr_db,
            tau_start,
            tau_end,
            out_dir,
            seed,
        };
        cfg.arch()?; // validate geometry/cpp consistency up front
        Ok(cfg)
    }

    /// Latent depth and bit length implied by the cpp target.
    pub fn derived_bits(&self) -> Result<(usize, usize)> {
        latent_channels_for_cpp(self.cpp, self.modulation, self.height, self.width, DOWNSAMPLE)
    }

    pub fn arch(&self) -> Result<CodecArch> {
        let (c_latent, _) = self.derived_bits()?;
        CodecArch::new(self.height, self.width, self.codec_width, c_latent)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            lr_decay_epochs: self.lr_decay_epochs,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            train_snr_db: self.train_snr_db,
            mode: self.mode,
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            modulation: self.modulation,
            seed: self.seed,
        }
    }

    /// Train/val/test splits with disjoint deterministic streams.
    pub fn splits(&self) -> Result<(Dataset, Dataset, Dataset)> {
        match &self.dataset {
            DatasetSpec::Synthetic { generator, count } => {
                let g = *generator;
                let train = ingest_dataset(
                    &DatasetSpec::Synthetic { generator: g, count: *count },
                    self.height,
                    self.width,
                    substream(self.seed, TAG_DATA_TRAIN),
                )?;
                let val = ingest_dataset(
                    &DatasetSpec::Synthetic { generator: g, count: self.val_images },
                    self.height,
                    self.width,
                    substream(self.seed, TAG_DATA_VAL),
                )?;
                let test = ingest_dataset(
                    &DatasetSpec::Synthetic { generator: g, count: self.test_images },
                    self.height,
                    self.width,
                    substream(self.seed, TAG_DATA_TEST),
                )?;
                Ok((train, val, test))
            }
            DatasetSpec::Directory(_) => {
                let all = ingest_dataset(&self.dataset, self.height, self.width, self.seed)?;
                let held = self.val_images + self.test_images;
                if all.len() <= held {
                    return Err(Error::invalid(format!(
                        "directory has {} usable images; {} are held out for val+test",
                        all.len(),
                        held
                    )));
                }
                let n_train = all.len() - held;
                let train = subset(&all, 0..n_train);
                let val = subset(&all, n_train..n_train + self.val_images);
                let test = subset(&all, n_train + self.val_images..all.len());
                Ok((train, val, test))
            }
        }
    }
}

fn subset(d: &Dataset, range: std::ops::Range<usize>) -> Dataset {
    let indices: Vec<usize> = range.collect();
    let batch = d.batch(&indices);
    let img_len = 3 * d.h * d.w;
    let images = (0..indices.len())
        .map(|i| batch.data()[i * img_len..][..img_len].to_vec())
        .collect();
    Dataset::from_images(d.h, d.w, images)
}

/// Accept `1/8` or `0.125`.
fn parse_cpp(s: &str) -> Result<f64> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| Error::Config(format!("bad cpp `{s}`")))?;
        let d: f64 = den.trim().parse().map_err(|_| Error::Config(format!("bad cpp `{s}`")))?;
        if d == 0.0 {
            return Err(Error::Config("cpp denominator is zero".into()));
        }
        Ok(n / d)
    } else {
        s.parse().map_err(|_| Error::Config(format!("bad cpp `{s}`")))
    }
}

// ── Result rows ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub snr_db: f64,
    pub cpp: f64,
    pub modulation: Modulation,
    pub mode: TrainMode,
    pub model: ModelKind,
    pub psnr_db: f64,
    pub ber: f64,
    pub n_images: usize,
    pub seed: u64,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.snr_db,
            self.cpp,
            self.modulation.name(),
            self.mode.name(),
            self.model.name(),
            self.psnr_db,
            self.ber,
            self.n_images,
            self.seed
        )
    }

    pub fn json_line(&self) -> String {
        format!(
            "{{\"snr_db\":{},\"cpp\":{},\"modulation\":\"{}\",\"mode\":\"{}\",\"model\":\"{}\",\"psnr_db\":{},\"ber\":{},\"n_images\":{},\"seed\":{}}}",
            self.snr_db,
            self.cpp,
            self.modulation.name(),
            self.mode.name(),
            self.model.name(),
            self.psnr_db,
            self.ber,
            self.n_images,
            self.seed
        )
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut text = String::from(RESULTS_CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

// ── Sweeps ───────────────────────────────────────────────────────────────

/// Evaluate every (snr, model) point of the grid on the test split.
///
/// Points are independent jobs with their own RNG streams; they run on a
/// small thread pool and are merged in (snr, model-name) order.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    models: &[Model],
    test: &Dataset,
    mode: TrainMode,
) -> Result<Vec<ResultRow>> {
    if models.is_empty() {
        return Err(Error::invalid("sweep needs at least one model"));
    }
    for m in models {
        let (_, l_b) = cfg.derived_bits()?;
        if m.l_b() != l_b {
            return Err(Error::invalid(format!(
                "checkpointed model `{}` transmits {} bits but the config cpp implies {l_b}",
                m.kind.name(),
                m.l_b()
            )));
        }
    }

    // point list in final merge order: snr ascending, model name ascending
    let mut model_order: Vec<usize> = (0..models.len()).collect();
    model_order.sort_by_key(|&i| models[i].kind.name());
    let mut points = Vec::new();
    let mut grid = cfg.snr_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("snr grid contains NaN"));
    for &snr in &grid {
        for &mi in &model_order {
            points.push((snr, mi));
        }
    }

    let l_b = models[0].l_b();
    let cpp = cpp_of(l_b, cfg.modulation, cfg.height, cfg.width)?;
    let n_threads = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let n_threads = n_threads.min(points.len()).max(1);

    let results: Vec<Result<ResultRow>> = thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..n_threads {
            let points = &points;
            let models_ref = models;
            let test_ref = test;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for (idx, &(snr, mi)) in points.iter().enumerate() {
                    if idx % n_threads != t {
                        continue;
                    }
                    let model = &models_ref[mi];
                    let point_seed = substream(
                        substream(cfg.seed, TAG_SWEEP),
                        (mi as u64) << 32 | idx as u64,
                    );
                    let row = evaluate_over_channel(
                        model,
                        test_ref,
                        cfg.modulation,
                        snr,
                        mode.decision(),
                        point_seed,
                    )
                    .map(|outcome| ResultRow {
                        snr_db: snr,
                        cpp,
                        modulation: cfg.modulation,
                        mode,
                        model: model.kind,
                        psnr_db: outcome.psnr_db,
                        ber: outcome.ber,
                        n_images: outcome.n_images,
                        seed: cfg.seed,
                    });
                    out.push((idx, row));
                }
                out
            }));
        }
        let mut merged: Vec<Option<Result<ResultRow>>> = (0..points.len()).map(|_| None).collect();
        for handle in handles {
            for (idx, row) in handle.join().expect("sweep worker panicked") {
                merged[idx] = Some(row);
            }
        }
        merged.into_iter().map(|r| r.expect("point not evaluated")).collect()
    });

    results.into_iter().collect()
}

// ── Training orchestration ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelect {
    One,
    Two,
    All,
}

impl StageSelect {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(StageSelect::One),
            "2" => Ok(StageSelect::Two),
            "all" => Ok(StageSelect::All),
            other => Err(Error::invalid(format!(
                "unknown stage `{other}` (expected 1, 2, or all)"
            ))),
        }
    }
}

pub fn checkpoint_path(out_dir: &Path, kind: ModelKind) -> PathBuf {
    out_dir.join(format!("{}.ckpt", kind.name()))
}

/// Train both systems per the config; write checkpoints, `train_log.csv`,
/// and `overhead.txt` into `out_dir`.
pub fn run_training(cfg: &ExperimentConfig, stage: StageSelect, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let (train, val, _) = cfg.splits()?;
    let (_, l_b) = cfg.derived_bits()?;
    let arch = cfg.arch()?;
    let tc = cfg.train_config();

    let mut log_rows: Vec<(ModelKind, u8, EpochLog)> = Vec::new();
    for kind in [ModelKind::BitSemCom, ModelKind::DeepJscc1Bit] {
        let ckpt = checkpoint_path(out_dir, kind);
        let mut model = match stage {
            StageSelect::Two => checkpoint::load(&ckpt)?,
            _ => Model::new(kind, arch, l_b, substream(cfg.seed, TAG_MODEL))?,
        };
        if matches!(stage, StageSelect::One | StageSelect::All) {
            let report = train_stage1(&mut model, &train, &val, &tc)?;
            for log in report.epoch_logs {
                log_rows.push((kind, 1, log));
            }
        }
        if matches!(stage, StageSelect::Two | StageSelect::All) {
            let report = train_stage2(&mut model, &train, &val, &tc)?;
            for log in report.epoch_logs {
                log_rows.push((kind, 2, log));
            }
        }
        checkpoint::save(&model, &ckpt)?;
    }

    let mut log = String::from("model,stage,epoch,lr,train_mse,val_psnr\n");
    for (kind, stage_no, row) in &log_rows {
        let _ = writeln!(
            log,
            "{},{},{},{},{},{}",
            kind.name(),
            stage_no,
            row.epoch,
            row.lr,
            row.train_mse,
            row.val_psnr
        );
    }
    fs::write(out_dir.join("train_log.csv"), log)?;

    let mapper = BitMapper::new(&arch, l_b, substream(cfg.seed, TAG_MODEL))?;
    let report = overhead_report(&crate::codec::Codec::new(arch, 0), &mapper);
    fs::write(out_dir.join("overhead.txt"), report.render())?;
    Ok(())
}

// ── Overhead accounting ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct OverheadReport {
    pub backbone_params: usize,
    pub backbone_flops: usize,
    pub mapper_params: usize,
    pub mapper_flops: usize,
}

/// Parameter and FLOP deltas of each system over the bare codec.
/// FLOPs count each multiply-accumulate as two operations.
pub fn overhead_report(codec: &crate::codec::Codec, mapper: &BitMapper) -> OverheadReport {
    OverheadReport {
        backbone_params: codec.param_count(),
        backbone_flops: 2 * codec.macs_per_image(),
        mapper_params: mapper.param_count(),
        mapper_flops: 2 * mapper.macs_per_image(),
    }
}

impl OverheadReport {
    pub fn mapper_param_share(&self) -> f64 {
        self.mapper_params as f64 / self.backbone_params as f64
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# FLOPs counted as multiply-accumulates x 2, per image forward pass");
        let _ = writeln!(s, "{:<16} {:>12} {:>16} {:>24} {:>24}", "model", "params", "flops", "delta_params", "delta_flops");
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>16} {:>24} {:>24}",
            "backbone", self.backbone_params, self.backbone_flops, "-", "-"
        );
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>16} {:>24} {:>24}",
            "deepjscc-1bit",
            self.backbone_params,
            self.backbone_flops,
            "+0 (+0.00%)",
            "+0 (+0.00%)"
        );
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>16} {:>24} {:>24}",
            "bitsemcom",
            self.backbone_params + self.mapper_params,
            self.backbone_flops + self.mapper_flops,
            format!(
                "+{} (+{:.2}%)",
                self.mapper_params,
                100.0 * self.mapper_params as f64 / self.backbone_params as f64
            ),
            format!(
                "+{} (+{:.2}%)",
                self.mapper_flops,
                100.0 * self.mapper_flops as f64 / self.backbone_flops as f64
            ),
        );
        s
    }
}

// ── Link-level BER sweep (the `ber` subcommand) ──────────────────────────

pub fn ber_sweep_csv(
    modulation: Modulation,
    snr_grid: &[f64],
    n_bits: usize,
    seed: u64,
) -> Result<String> {
    let c = Constellation::new(modulation);
    let mut out = String::from("snr_db,modulation,n_bits,ber_mc,ber_analytic\n");
    for (i, &snr) in snr_grid.iter().enumerate() {
        let est = measure_ber(modulation, snr, n_bits, substream(seed, i as u64))?;
        let analytic = match analytic_ber(&c, snr) {
            Ok(v) => format!("{v}"),
            Err(Error::Unsupported(_)) => "nan".to_string(),
            Err(e) => return Err(e),
        };
        let _ = writeln!(out, "{},{},{},{},{}", snr, modulation.name(), est.n_bits, est.ber, analytic);
    }
    Ok(out)
}

/// Max |sigmoid(LLR) - enumeration posterior| over `samples` random
/// received points and noise levels (the `llr-check` subcommand).
pub fn llr_exactness_check(modulation: Modulation, samples: usize, seed: u64) -> f64 {
    use crate::modem::{demodulate_llr, ChannelRealization, DecisionMode, Iq, LLR_CLAMP};
    use crate::rng::Rng;
    use crate::tape::sigmoid_scalar;

    let c = Constellation::new(modulation);
    let mut rng = Rng::seed_from(substream(seed, 0x11c));
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let r = Iq::new(4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0);
        let sigma2 = 0.05 + 1.95 * rng.uniform();
        let ch = ChannelRealization {
            snr_db: 0.0,
            sigma2_per_dim: sigma2,
            mode: DecisionMode::Soft,
        };
        let llr = demodulate_llr(&[r], &c, &ch);
        for (bit, &delta) in llr.as_slice().iter().enumerate() {
            if delta.abs() >= LLR_CLAMP {
                continue; // saturated: clamped by design
            }
            let scores: Vec<f64> = c
                .symbols()
                .iter()
                .map(|s| -r.dist_sq(s) / (2.0 * sigma2))
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut num = 0.0;
            let mut den = 0.0;
            for (idx, sc) in scores.iter().enumerate() {
                let w = (sc - max).exp();
                den += w;
                if c.labels()[idx][bit] == 1 {
                    num += w;
                }
            }
            worst = worst.max((sigmoid_scalar(delta) - num / den).abs());
        }
    }
    worst
}

// ── stdout echo helper ───────────────────────────────────────────────────

pub fn echo_json_lines(rows: &[ResultRow]) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for row in rows {
        let _ = writeln!(lock, "{}", row.json_line());
    }
}
