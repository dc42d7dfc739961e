//! End-to-end tests of the binary: every subcommand against a tiny
//! experiment, plus the failure paths users actually hit (missing config,
//! wrong file type).

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_weightmark");

const TINY: &str = r#"
label = "tiny"

[dataset]
kind = "gaussian-blobs"
classes = 2
per_class = 16
features = 9
noise = 0.5
seed = 11

[network]
input = [3, 3, 1]
init_seed = 7
layers = [
    { kind = "conv2d", id = "conv1", kernel = 3, in_channels = 1, filters = 4 },
    { kind = "relu" },
    { kind = "avg_pool_global" },
    { kind = "dense", id = "fc", inputs = 4, outputs = 2 },
    { kind = "softmax_head" },
]

[train]
epochs = 6
batch_size = 4
learning_rate = 0.05
momentum = 0.9
seed = 5
lambda = 0.05

[[embeds]]
layer = "conv1"
payload = 4
key_seed = 2
message_seed = 3
decoder = { kind = "stdm", alpha = 10.0, beta = 10.0 }

[[attacks]]
kind = "prune_random"
layer = "conv1"
rate = 0.3
seed = 99
"#;

fn weightmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("WEIGHTMARK_OUT")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_tiny(dir: &Path) -> String {
    let cfg = dir.join("exp.toml");
    std::fs::write(&cfg, TINY).unwrap();
    cfg.to_str().unwrap().to_owned()
}

#[test]
fn train_extract_attack_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny(tmp.path());
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();

    let text = stdout(&weightmark(tmp.path(), &["train", "--config", &cfg, "--out", out_s]));
    assert!(text.contains("tiny: ter="), "summary line: {text}");
    assert!(out.join("tiny.ckpt").is_file());
    assert!(out.join("reports.jsonl").is_file());

    let ckpt = out.join("tiny.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let text = stdout(&weightmark(tmp.path(), &["extract", "--checkpoint", ckpt_s]));
    assert!(text.contains("layer=conv1"), "records embed layer: {text}");
    assert!(text.contains("ber=") && text.contains("bits="), "scores the read: {text}");

    let text = stdout(&weightmark(
        tmp.path(),
        &["attack", "--checkpoint", ckpt_s, "--config", &cfg],
    ));
    assert!(text.contains("prune_random(conv1, 30%)"), "attack line: {text}");
    assert!(text.contains("ber ["), "before/after metrics: {text}");

    let text = stdout(&weightmark(tmp.path(), &["report", "--out", out_s]));
    assert!(text.contains("task loss") && text.contains("tiny"), "run table: {text}");
    assert!(text.contains("prune_random"), "attack table: {text}");
}

#[test]
fn env_var_sets_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny(tmp.path());
    let dest = tmp.path().join("envout");
    let out = Command::new(BIN)
        .args(["train", "--config", &cfg])
        .env("WEIGHTMARK_OUT", &dest)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dest.join("tiny.ckpt").is_file());
    assert!(dest.join("reports.jsonl").is_file());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny(tmp.path());
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    let a = stdout(&weightmark(
        tmp.path(),
        &["train", "--config", &cfg, "--out", out_s, "--seed", "900"],
    ));
    let b = stdout(&weightmark(
        tmp.path(),
        &["train", "--config", &cfg, "--out", out_s, "--seed", "901"],
    ));
    let hash = |s: &str| s.split("config=").nth(1).unwrap()[..12].to_owned();
    assert_ne!(hash(&a), hash(&b), "seed must reach the config hash");
}

#[test]
fn keygen_and_explicit_key_extraction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny(tmp.path());
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    stdout(&weightmark(tmp.path(), &["train", "--config", &cfg, "--out", out_s]));
    stdout(&weightmark(
        tmp.path(),
        &["keygen", "--seed", "77", "--payload", "4", "--host-dim", "9", "--out", out_s],
    ));
    let key = out.join("key-77.json");
    assert!(key.is_file());

    let ckpt = out.join("tiny.ckpt");
    let text = stdout(&weightmark(
        tmp.path(),
        &[
            "extract",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--key",
            key.to_str().unwrap(),
            "--layer",
            "conv1",
            "--scheme",
            "stdm",
            "--expect",
            "0000",
        ],
    ));
    assert!(text.contains("bits=") && text.contains("ber="), "scored read: {text}");
}

#[test]
fn sweep_expands_axes_and_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sweep = String::from("[base]\n");
    // Reuse the tiny experiment as the [base] table.
    for line in TINY.trim().lines() {
        if let Some(section) = line.strip_prefix("[[") {
            sweep.push_str(&format!("[[base.{}\n", section));
        } else if let Some(section) = line.strip_prefix('[') {
            sweep.push_str(&format!("[base.{}\n", section));
        } else {
            sweep.push_str(line);
            sweep.push('\n');
        }
    }
    sweep.push_str("\n[[axes]]\naxis = \"payload\"\nvalues = [2, 4]\n");
    sweep.push_str("\n[[axes]]\naxis = \"trial\"\nvalues = [5, 6]\n");
    let path = tmp.path().join("sweep.toml");
    std::fs::write(&path, sweep).unwrap();

    let out = tmp.path().join("out");
    let text = stdout(&weightmark(
        tmp.path(),
        &[
            "sweep",
            "--config",
            path.to_str().unwrap(),
            "--jobs",
            "2",
            "--out",
            out.to_str().unwrap(),
        ],
    ));
    assert!(text.contains("sweep: 4 run(s)"), "cross product of both axes: {text}");
    for label in ["tiny/l=2/trial=5", "tiny/l=2/trial=6", "tiny/l=4/trial=5", "tiny/l=4/trial=6"] {
        assert!(text.contains(label), "missing {label}: {text}");
    }
    assert!(out.join("tiny_l_2_trial_5.ckpt").is_file(), "per-run checkpoints");
    let log = std::fs::read_to_string(out.join("reports.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn failures_exit_nonzero_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny(tmp.path());

    let out = weightmark(tmp.path(), &["train", "--config", "no-such.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no-such.toml"), "names the missing file: {err}");

    // A TOML file is not a checkpoint.
    let out = weightmark(tmp.path(), &["extract", "--checkpoint", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("magic"), "explains the format mismatch: {err}");

    let out = weightmark(tmp.path(), &["report", "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success(), "no reports yet");
}
