//! Command-line front end.
//!
//! Subcommands:
//!   train     --config PATH [--stage 1|2|all] [--mode soft|hard] [--out DIR]
//!   sweep     --config PATH --checkpoint PATH [--checkpoint PATH ...] [--out DIR]
//!   ber       --modulation M --snr-grid LIST --bits N [--out DIR]
//!   llr-check --modulation M --samples N
//!   overhead  --checkpoint PATH
//!
//! Exits 0 on success; on failure prints one line to stderr and exits 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bitsemcom::checkpoint;
use bitsemcom::codec::Codec;
use bitsemcom::error::{Error, Result};
use bitsemcom::harness::{
    ber_sweep_csv, echo_json_lines, llr_exactness_check, overhead_report, run_sweep, run_training,
    write_results_csv, ExperimentConfig, StageSelect,
};
use bitsemcom::mapper::BitMapper;
use bitsemcom::model::ModelKind;
use bitsemcom::modem::Modulation;
use bitsemcom::train::TrainMode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        return Err(Error::InvalidArgument(format!("no subcommand given; {USAGE}")));
    };
    let flags = Flags::parse(&args[1..])?;
    match cmd.as_str() {
        "train" => cmd_train(&flags),
        "sweep" => cmd_sweep(&flags),
        "ber" => cmd_ber(&flags),
        "llr-check" => cmd_llr_check(&flags),
        "overhead" => cmd_overhead(&flags),
        other => Err(Error::InvalidArgument(format!(
            "unknown subcommand `{other}`; {USAGE}"
        ))),
    }
}

const USAGE: &str = "expected one of: train, sweep, ber, llr-check, overhead";

struct Flags {
    config: Option<PathBuf>,
    stage: Option<String>,
    mode: Option<String>,
    out: Option<PathBuf>,
    checkpoints: Vec<PathBuf>,
    modulation: Option<String>,
    snr_grid: Option<String>,
    bits: Option<usize>,
    samples: Option<usize>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self> {
        let mut f = Flags {
            config: None,
            stage: None,
            mode: None,
            out: None,
            checkpoints: Vec::new(),
            modulation: None,
            snr_grid: None,
            bits: None,
            samples: None,
        };
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let mut value = || {
                it.next()
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("flag {flag} needs a value")))
            };
            match flag.as_str() {
                "--config" => f.config = Some(PathBuf::from(value()?)),
                "--stage" => f.stage = Some(value()?),
                "--mode" => f.mode = Some(value()?),
                "--out" => f.out = Some(PathBuf::from(value()?)),
                "--checkpoint" => f.checkpoints.push(PathBuf::from(value()?)),
                "--modulation" => f.modulation = Some(value()?),
                "--snr-grid" => f.snr_grid = Some(value()?),
                "--bits" => {
                    f.bits = Some(
                        value()?
                            .parse()
                            .map_err(|_| Error::InvalidArgument("bad --bits".into()))?,
                    )
                }
                "--samples" => {
                    f.samples = Some(
                        value()?
                            .parse()
                            .map_err(|_| Error::InvalidArgument("bad --samples".into()))?,
                    )
                }
                other => {
                    return Err(Error::InvalidArgument(format!("unknown flag `{other}`")))
                }
            }
        }
        Ok(f)
    }

    fn require_config(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--config PATH is required".into()))?;
        ExperimentConfig::parse_file(path)
    }

    fn require_modulation(&self) -> Result<Modulation> {
        let m = self
            .modulation
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--modulation is required".into()))?;
        Modulation::parse(m)
    }
}

fn cmd_train(flags: &Flags) -> Result<()> {
    let mut cfg = flags.require_config()?;
    if let Some(mode) = &flags.mode {
        cfg.mode = TrainMode::parse(mode)?;
    }
    let stage = match &flags.stage {
        Some(s) => StageSelect::parse(s)?,
        None => StageSelect::All,
    };
    let out_dir = flags.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    run_training(&cfg, stage, &out_dir)?;
    println!("trained; artifacts in {}", out_dir.display());
    Ok(())
}

fn cmd_sweep(flags: &Flags) -> Result<()> {
    let cfg = flags.require_config()?;
    if flags.checkpoints.is_empty() {
        return Err(Error::InvalidArgument(
            "--checkpoint PATH is required at least once".into(),
        ));
    }
    let models = flags
        .checkpoints
        .iter()
        .map(|p| checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let (_, _, test) = cfg.splits()?;
    let rows = run_sweep(&cfg, &models, &test, cfg.mode)?;
    let out_dir = flags.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    write_results_csv(&out_dir.join("results.csv"), &rows)?;
    echo_json_lines(&rows);
    Ok(())
}

fn cmd_ber(flags: &Flags) -> Result<()> {
    let modulation = flags.require_modulation()?;
    let grid: Vec<f64> = flags
        .snr_grid
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--snr-grid is required".into()))?
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument("bad --snr-grid".into()))?;
    let bits = flags
        .bits
        .ok_or_else(|| Error::InvalidArgument("--bits is required".into()))?;
    let csv = ber_sweep_csv(modulation, &grid, bits, 0x62_6572)?;
    print!("{csv}");
    if let Some(out) = &flags.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("ber.csv"), csv)?;
    }
    Ok(())
}

fn cmd_llr_check(flags: &Flags) -> Result<()> {
    let modulation = flags.require_modulation()?;
    let samples = flags.samples.unwrap_or(10_000);
    let worst = llr_exactness_check(modulation, samples, 0x11c);
    println!(
        "{}: max |sigmoid(llr) - enumeration posterior| over {samples} samples = {worst:.3e}",
        modulation.name()
    );
    if worst > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "LLR deviates from the enumeration posterior by {worst:.3e} (> 1e-9)"
        )));
    }
    Ok(())
}

fn cmd_overhead(flags: &Flags) -> Result<()> {
    let path = flags
        .checkpoints
        .first()
        .ok_or_else(|| Error::InvalidArgument("--checkpoint PATH is required".into()))?;
    let model = checkpoint::load(path)?;
    let arch = model.codec.arch;
    let codec = Codec::new(arch, 0);
    let mapper = match &model.mapper {
        Some(m) => m.clone(),
        None => BitMapper::new(&arch, model.l_b(), 0)?,
    };
    if model.kind == ModelKind::DeepJscc1Bit {
        println!("# note: checkpoint is the 1-bit baseline; mapper row shows the companion system");
    }
    let report = overhead_report(&codec, &mapper);
    print!("{}", report.render());
    let out = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::write(out.join("overhead.txt"), report.render())?;
    Ok(())
}
