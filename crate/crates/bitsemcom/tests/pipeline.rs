//! End-to-end checks of the command-line surface and the file formats it
//! produces. These drive the real binary via std::process.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bitsemcom"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bitsemcom_cli_{}_{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CFG: &str = "\
dataset = synthetic:mixed:16
val_images = 4
test_images = 6
height = 16
width = 16
modulation = qpsk
cpp = 1/4
snr_grid = 0, 12
mode = soft
codec_width = 4
batch_size = 8
learning_rate = 1e-3
stage1_epochs = 2
stage2_epochs = 2
train_snr_db = 6
seed = 3
";

#[test]
fn train_then_sweep_produces_all_artifacts() {
    let dir = scratch("roundtrip");
    let cfg = dir.join("exp.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();

    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("bitsemcom.ckpt").exists());
    assert!(dir.join("deepjscc-1bit.ckpt").exists());
    assert!(dir.join("overhead.txt").exists());

    let log = fs::read_to_string(dir.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "model,stage,epoch,lr,train_mse,val_psnr");
    // both models, both stages, two epochs each
    assert_eq!(log.lines().count(), 1 + 2 * 2 * 2);

    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(dir.join("bitsemcom.ckpt"))
        .arg("--checkpoint")
        .arg(dir.join("deepjscc-1bit.ckpt"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // stdout mirrors the rows as JSON lines
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 4);
    assert!(stdout.lines().all(|l| l.starts_with('{') && l.ends_with('}')));

    let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "snr_db,cpp,modulation,mode,model,psnr_db,ber,n_images,seed"
    );
    assert_eq!(csv.lines().count(), 5);
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').count(), 9, "{line}");
    }
}

#[test]
fn overhead_subcommand_reports_deltas() {
    let dir = scratch("overhead");
    let cfg = dir.join("exp.cfg");
    fs::write(&cfg, TINY_CFG.replace("stage1_epochs = 2", "stage1_epochs = 0").replace("stage2_epochs = 2", "stage2_epochs = 0")).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = bin()
        .args(["overhead", "--checkpoint"])
        .arg(dir.join("bitsemcom.ckpt"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("+0 (+0.00%)"), "{text}");
    assert!(dir.join("overhead.txt").exists());
}

#[test]
fn missing_checkpoint_fails_naming_the_path() {
    let dir = scratch("missing");
    let cfg = dir.join("exp.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(dir.join("nope.ckpt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("nope.ckpt"), "{err}");
}

#[test]
fn bad_config_key_fails_with_one_line_reason() {
    let dir = scratch("badkey");
    let cfg = dir.join("exp.cfg");
    fs::write(&cfg, format!("{TINY_CFG}\nmystery_knob = 9\n")).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("mystery_knob"), "{err}");
}

#[test]
fn ber_subcommand_writes_csv() {
    let dir = scratch("ber");
    let out = bin()
        .args([
            "ber",
            "--modulation",
            "qpsk",
            "--snr-grid",
            "0,6",
            "--bits",
            "20000",
            "--out",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("ber.csv")).unwrap();
    assert!(csv.starts_with("snr_db,modulation,n_bits,ber_mc,ber_analytic\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn llr_check_passes_for_all_modulations() {
    for m in ["bpsk", "qpsk", "qam16"] {
        let out = bin()
            .args(["llr-check", "--modulation", m, "--samples", "3000"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{m}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
