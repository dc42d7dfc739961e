//! Command-line front end: generate keys, train watermarked models, extract
//! and verify marks from checkpoints, attack them, and render report tables.
//!
//! Output files land in `--out` if given, else in `$WEIGHTMARK_OUT`, else in
//! the current directory. Every run appends one JSON line to
//! `reports.jsonl` there, so repeated runs and sweeps accumulate into a
//! single log that `weightmark report` can render.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use weightmark::attacks::run_attack_suite;
use weightmark::experiment::{
    append_report, expand_sweep, read_reports, render_tables, run, run_sweep, ExperimentConfig,
    RunOutcome, SweepAxis,
};
use weightmark::nn::{load, save, synth_dataset, CheckpointMeta, EmbedMeta};
use weightmark::{
    bit_error_rate, DecoderKind, KeyFile, WatermarkMessage, WatermarkRegularizer, GENERATOR_ID,
};

const OUT_ENV: &str = "WEIGHTMARK_OUT";

#[derive(Parser)]
#[command(
    name = "weightmark",
    version,
    about = "Embed, extract and attack watermarks in neural-network weights"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a projection-key file (the secret needed for extraction).
    Keygen(KeygenArgs),
    /// Train a model from an experiment config, embedding its watermarks.
    Train(TrainArgs),
    /// Read watermarks back out of a checkpoint.
    Extract(ExtractArgs),
    /// Attack a trained checkpoint and measure what survives.
    Attack(AttackArgs),
    /// Render accumulated run reports as tables.
    Report(ReportArgs),
    /// Expand sweep axes over a base config and run every variant.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct KeygenArgs {
    /// Seed the key matrix is regenerated from.
    #[arg(long)]
    seed: u64,
    /// Number of watermark bits the key carries.
    #[arg(long)]
    payload: usize,
    /// Flattened host length of the embedding layer (e.g. 576 for 3x3x64).
    #[arg(long)]
    host_dim: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the training shuffle seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Checkpoint to read.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Extract with an explicit key file instead of the checkpoint's own
    /// embed records (simulates the verifier side).
    #[arg(long, requires = "layer")]
    key: Option<PathBuf>,
    /// Layer to read when using --key.
    #[arg(long)]
    layer: Option<String>,
    /// Decoder for --key extraction: "ss" or "stdm".
    #[arg(long, default_value = "ss")]
    scheme: String,
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    /// Reference bit string ("0101...") to score the read against.
    #[arg(long)]
    expect: Option<String>,
}

#[derive(Args)]
struct AttackArgs {
    /// Checkpoint to attack.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment config supplying the dataset, fine-tune defaults and the
    /// [[attacks]] list. Embeds come from the checkpoint itself.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report log to render; defaults to reports.jsonl in the output dir.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Output directory (used only to locate the default report log).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config (TOML): a [base] experiment plus [[axes]].
    #[arg(long)]
    config: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the base training shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A sweep file is a full experiment under [base] plus any number of
/// [[axes]] tables; axes expand as a cross product in file order.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: ExperimentConfig,
    #[serde(default)]
    axes: Vec<SweepAxis>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Keygen(a) => keygen(a),
        Cmd::Train(a) => train(a),
        Cmd::Extract(a) => extract(a),
        Cmd::Attack(a) => attack(a),
        Cmd::Report(a) => report(a),
        Cmd::Sweep(a) => sweep(a),
    }
}

fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf, Box<dyn std::error::Error>> {
    let dir = flag
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Labels may contain separators handy for tables ("sweep/l=128"); file
/// names should not.
fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn keygen(a: KeygenArgs) -> Result<(), Box<dyn std::error::Error>> {
    let dir = out_dir(a.out)?;
    let path = dir.join(format!("key-{}.json", a.seed));
    KeyFile::new(a.seed, a.payload, a.host_dim).save(&path)?;
    println!("wrote {} ({} bits over host dim {})", path.display(), a.payload, a.host_dim);
    Ok(())
}

fn save_outcome(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &RunOutcome,
) -> Result<PathBuf, Box<dyn std::error::Error>> {
    let meta = CheckpointMeta {
        generator: GENERATOR_ID.into(),
        data_seed: Some(cfg.dataset.seed),
        train_seed: Some(cfg.train.seed),
        epochs_trained: cfg.train.epochs,
        lambda: cfg.train.lambda,
        embeds: out.embeds.iter().map(EmbedMeta::from_spec).collect(),
    };
    let path = dir.join(format!("{}.ckpt", file_stem(&cfg.label)));
    save(&path, &out.network, Some(&out.state), &meta)?;
    append_report(&dir.join("reports.jsonl"), &out.report)?;
    Ok(path)
}

fn print_summary(out: &RunOutcome) {
    let r = &out.report;
    let bers: Vec<String> = r.ber.iter().map(|b| format!("{b:.4}")).collect();
    println!(
        "{}: ter={:.4} ber=[{}] task_loss={:.4} config={} ({:.1}s)",
        r.label,
        r.ter,
        bers.join(", "),
        r.final_task_loss,
        &r.config_hash[..12],
        r.wall_clock_secs
    );
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn train(a: TrainArgs) -> Result<(), Box<dyn std::error::Error>> {
    let dir = out_dir(a.out)?;
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let out = run(&cfg)?;
    print_summary(&out);
    let path = save_outcome(&dir, &cfg, &out)?;
    println!("wrote {}", path.display());
    println!("appended {}", dir.join("reports.jsonl").display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<(), Box<dyn std::error::Error>> {
    let ckpt = load(&a.checkpoint)?;
    let expect = a.expect.as_deref().map(WatermarkMessage::parse).transpose()?;

    if let Some(key_path) = a.key {
        let layer = a.layer.expect("clap enforces --layer with --key");
        let key = KeyFile::load(&key_path)?.to_key()?;
        let decoder = match a.scheme.as_str() {
            "ss" => DecoderKind::Ss { gamma: a.gamma },
            "stdm" => DecoderKind::Stdm { alpha: a.alpha, beta: a.beta },
            other => return Err(format!("unknown scheme `{other}` (ss|stdm)").into()),
        };
        let idx = ckpt.network.layer_index(&layer)?;
        let host = ckpt.network.host_flatten(idx)?;
        // The regularizer wants a reference message; extraction ignores it,
        // so score against --expect when given and zeros otherwise.
        let reference =
            expect.clone().unwrap_or_else(|| WatermarkMessage::new(vec![false; key.rows()]));
        let reg = WatermarkRegularizer::new(key, reference.clone(), decoder)?;
        let read = reg.extract(&host)?;
        print!("layer={layer} scheme={} payload={} bits={}", a.scheme, read.len(), read.to_bit_string());
        if expect.is_some() {
            print!(" ber={:.4}", bit_error_rate(&reference, &read)?);
        }
        println!();
        return Ok(());
    }

    if ckpt.meta.embeds.is_empty() {
        return Err("checkpoint records no embedded watermarks; pass --key to probe one".into());
    }
    for meta in &ckpt.meta.embeds {
        let spec = meta.to_spec(&ckpt.network)?;
        let (idx, reg) = spec.resolve(&ckpt.network)?;
        let read = reg.extract(&ckpt.network.host_flatten(idx)?)?;
        let truth = expect.as_ref().unwrap_or(&spec.message);
        println!(
            "layer={} decoder={:?} payload={} ber={:.4} bits={}",
            meta.layer,
            meta.decoder,
            meta.payload,
            bit_error_rate(truth, &read)?,
            read.to_bit_string()
        );
    }
    Ok(())
}

fn attack(a: AttackArgs) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = load_config(&a.config)?;
    if cfg.attacks.is_empty() {
        return Err("config declares no [[attacks]]".into());
    }
    let ckpt = load(&a.checkpoint)?;
    if ckpt.meta.embeds.is_empty() {
        return Err("checkpoint records no embedded watermarks to measure".into());
    }
    let data = synth_dataset(&cfg.dataset)?;
    let embeds: Vec<_> = ckpt
        .meta
        .embeds
        .iter()
        .map(|m| m.to_spec(&ckpt.network))
        .collect::<weightmark::Result<_>>()?;
    let reports = run_attack_suite(&ckpt.network, &data, &cfg.train, &embeds, &cfg.attacks)?;
    for r in &reports {
        let before: Vec<String> = r.ber_before.iter().map(|b| format!("{b:.4}")).collect();
        let after: Vec<String> = r.ber_after.iter().map(|b| format!("{b:.4}")).collect();
        println!(
            "{}: ter {:.4} -> {:.4}, ber [{}] -> [{}]",
            r.attack.describe(),
            r.ter_before,
            r.ter_after,
            before.join(", "),
            after.join(", ")
        );
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Box<dyn std::error::Error>> {
    let path = match a.reports {
        Some(p) => p,
        None => out_dir(a.out)?.join("reports.jsonl"),
    };
    let reports = read_reports(&path)?;
    if reports.is_empty() {
        return Err(format!("no reports in {}", path.display()).into());
    }
    print!("{}", render_tables(&reports));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Box<dyn std::error::Error>> {
    let dir = out_dir(a.out)?;
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| format!("{}: {e}", a.config.display()))?;
    let file: SweepFile =
        toml::from_str(&text).map_err(|e| format!("{}: {e}", a.config.display()))?;
    let mut base = file.base;
    if let Some(seed) = a.seed {
        base.train.seed = seed;
    }
    let mut configs = vec![base];
    for axis in &file.axes {
        let mut next = Vec::new();
        for cfg in &configs {
            next.extend(expand_sweep(cfg, axis)?);
        }
        configs = next;
    }
    println!("sweep: {} run(s) on {} job(s)", configs.len(), a.jobs.max(1));
    let outcomes = run_sweep(&configs, a.jobs.max(1))?;
    let mut reports = Vec::new();
    for (cfg, out) in configs.iter().zip(&outcomes) {
        print_summary(out);
        save_outcome(&dir, cfg, out)?;
        reports.push(out.report.clone());
    }
    print!("{}", render_tables(&reports));
    Ok(())
}
