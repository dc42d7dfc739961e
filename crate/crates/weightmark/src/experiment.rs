//! Config-driven experiment runs.
//!
//! A TOML config pins everything: dataset synthesis, network architecture,
//! training schedule, embed declarations (layer, payload, key seed, decoder)
//! and an optional attack suite. Running a config yields an
//! [`ExperimentReport`] whose every numeric field is reproducible from the
//! config alone — the sole exception is `wall_clock_secs`, which is why
//! [`reports_equivalent`] ignores it.

use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{run_attack_suite, AttackKind, AttackReport};
use crate::error::{Error, Result};
use crate::key::ProjectionKey;
use crate::message::WatermarkMessage;
use crate::nn::data::{synth_dataset, DataConfig, Dataset};
use crate::nn::layer::LayerSpec;
use crate::nn::network::Network;
use crate::nn::train::{train, EmbedSpec, SgdState, TrainConfig, TrainHistory};
use crate::regularizer::DecoderKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input shape as (height, width, channels).
    pub input: [usize; 3],
    pub init_seed: u64,
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    pub fn build(&self) -> Result<Network> {
        Network::new(
            (self.input[0], self.input[1], self.input[2]),
            self.layers.clone(),
            self.init_seed,
        )
    }
}

/// A watermark declaration as it appears in config files. The key matrix is
/// never stored; it is regenerated from `key_seed` against the target
/// layer's host length, and the message comes either spelled out or from
/// its own seed (exactly one of the two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedDecl {
    pub layer: String,
    pub payload: usize,
    pub key_seed: u64,
    #[serde(default)]
    pub message: Option<String>,
    #[serde(default)]
    pub message_seed: Option<u64>,
    pub decoder: DecoderKind,
}

impl EmbedDecl {
    pub fn resolve(&self, net: &Network) -> Result<EmbedSpec> {
        if self.payload == 0 {
            return Err(Error::InvalidConfig(format!(
                "embed on `{}` has payload 0",
                self.layer
            )));
        }
        let message = match (&self.message, self.message_seed) {
            (Some(bits), None) => {
                let m = WatermarkMessage::parse(bits)?;
                if m.len() != self.payload {
                    return Err(Error::InvalidConfig(format!(
                        "embed on `{}`: message has {} bits, payload says {}",
                        self.layer,
                        m.len(),
                        self.payload
                    )));
                }
                m
            }
            (None, Some(seed)) => WatermarkMessage::random(seed, self.payload),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "embed on `{}` needs exactly one of `message` or `message_seed`",
                    self.layer
                )))
            }
        };
        let idx = net.layer_index(&self.layer)?;
        let params = net.layer_params(idx).ok_or_else(|| {
            Error::InvalidEmbedSpec(format!("layer `{}` has no weights", self.layer))
        })?;
        let v = params.weights.shape().host_len();
        Ok(EmbedSpec {
            layer_id: self.layer.clone(),
            key: ProjectionKey::generate(self.key_seed, self.payload, v),
            message,
            decoder: self.decoder,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: String,
    pub dataset: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub embeds: Vec<EmbedDecl>,
    #[serde(default)]
    pub attacks: Vec<AttackKind>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Cheap validation of everything checkable without training: dataset
    /// and schedule parameters, network construction, key/payload fit.
    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::InvalidConfig("label must not be empty".into()));
        }
        self.dataset.validate()?;
        self.train.validate()?;
        let net = self.network.build()?;
        for decl in &self.embeds {
            decl.resolve(&net)?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form (sorted object keys).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canon = serde_json::to_string(&value).expect("value serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub label: String,
    pub config_hash: String,
    /// Task test error rate after training.
    pub ter: f64,
    /// One BER per embed declaration, in declaration order.
    pub ber: Vec<f64>,
    pub final_task_loss: f64,
    pub final_reg_loss: Vec<f64>,
    #[serde(default)]
    pub attacks: Vec<AttackReport>,
    /// Informational only; excluded from reproducibility comparisons.
    pub wall_clock_secs: f64,
}

/// Field-for-field equality modulo wall clock.
pub fn reports_equivalent(a: &ExperimentReport, b: &ExperimentReport) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    a.wall_clock_secs = 0.0;
    b.wall_clock_secs = 0.0;
    a == b
}

/// Everything a run produces, for callers that keep going (attacks on the
/// trained model, checkpointing, acceptance assertions).
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub network: Network,
    pub state: SgdState,
    pub history: TrainHistory,
    pub embeds: Vec<EmbedSpec>,
    pub data: Dataset,
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    config.validate()?;
    let data = synth_dataset(&config.dataset)?;
    let mut net = config.network.build()?;
    let embeds: Vec<EmbedSpec> = config
        .embeds
        .iter()
        .map(|d| d.resolve(&net))
        .collect::<Result<_>>()?;

    let (history, state) = train(&mut net, &data, &config.train, &embeds)?;
    let last = history.last().expect("at least one epoch");

    let attacks = run_attack_suite(&net, &data, &config.train, &embeds, &config.attacks)?;

    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        label: config.label.clone(),
        config_hash: config.hash(),
        ter: last.test_error,
        ber: last.ber.clone(),
        final_task_loss: last.task_loss,
        final_reg_loss: last.reg_loss.clone(),
        attacks,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        report,
        network: net,
        state,
        history,
        embeds,
        data,
    })
}

/// One sweep axis expands a base config into labeled variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Payload length per embed declaration (message seeds must be in use,
    /// since a spelled-out message pins its own length).
    Payload { values: Vec<usize> },
    /// Decision-region frequency of every quantization-decoder embed.
    Beta { values: Vec<f64> },
    /// Sigmoid sharpness of every spread-spectrum embed.
    Gamma { values: Vec<f64> },
    /// Random-pruning rates applied to one layer of a single trained model;
    /// each rate is attacked once per mask seed.
    PruneRandom {
        layer: String,
        rates: Vec<f64>,
        seeds: Vec<u64>,
    },
    /// Fresh training trajectories: value re-seeds the shuffle stream and
    /// value+1 the weight init. Data, keys and messages stay pinned.
    Trial { values: Vec<u64> },
}

pub fn expand_sweep(base: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<ExperimentConfig>> {
    let mut out = Vec::new();
    match axis {
        SweepAxis::Payload { values } => {
            if base.embeds.is_empty() {
                return Err(Error::InvalidConfig("payload sweep needs embeds".into()));
            }
            if base.embeds.iter().any(|d| d.message.is_some()) {
                return Err(Error::InvalidConfig(
                    "payload sweep needs seeded messages, not spelled-out ones".into(),
                ));
            }
            for &l in values {
                let mut cfg = base.clone();
                cfg.label = format!("{}/l={l}", base.label);
                for d in &mut cfg.embeds {
                    d.payload = l;
                }
                out.push(cfg);
            }
        }
        SweepAxis::Beta { values } => {
            let hits = |cfg: &ExperimentConfig| {
                cfg.embeds
                    .iter()
                    .any(|d| matches!(d.decoder, DecoderKind::Stdm { .. }))
            };
            if !hits(base) {
                return Err(Error::InvalidConfig(
                    "beta sweep needs a quantization-decoder embed".into(),
                ));
            }
            for &b in values {
                let mut cfg = base.clone();
                cfg.label = format!("{}/beta={b}", base.label);
                for d in &mut cfg.embeds {
                    if let DecoderKind::Stdm { beta, .. } = &mut d.decoder {
                        *beta = b;
                    }
                }
                out.push(cfg);
            }
        }
        SweepAxis::Gamma { values } => {
            let hits = |cfg: &ExperimentConfig| {
                cfg.embeds
                    .iter()
                    .any(|d| matches!(d.decoder, DecoderKind::Ss { .. }))
            };
            if !hits(base) {
                return Err(Error::InvalidConfig(
                    "gamma sweep needs a spread-spectrum embed".into(),
                ));
            }
            for &g in values {
                let mut cfg = base.clone();
                cfg.label = format!("{}/gamma={g}", base.label);
                for d in &mut cfg.embeds {
                    if let DecoderKind::Ss { gamma } = &mut d.decoder {
                        *gamma = g;
                    }
                }
                out.push(cfg);
            }
        }
        SweepAxis::PruneRandom { layer, rates, seeds } => {
            if rates.is_empty() || seeds.is_empty() {
                return Err(Error::InvalidConfig(
                    "prune sweep needs at least one rate and one seed".into(),
                ));
            }
            let mut cfg = base.clone();
            cfg.label = format!("{}/prune", base.label);
            cfg.attacks = rates
                .iter()
                .flat_map(|&rate| {
                    seeds.iter().map(move |&seed| AttackKind::PruneRandom {
                        layer: layer.clone(),
                        rate,
                        seed,
                    })
                })
                .collect();
            out.push(cfg);
        }
        SweepAxis::Trial { values } => {
            for &s in values {
                let mut cfg = base.clone();
                cfg.label = format!("{}/trial={s}", base.label);
                cfg.train.seed = s;
                cfg.network.init_seed = s.wrapping_add(1);
                out.push(cfg);
            }
        }
    }
    Ok(out)
}

/// Run configs on up to `jobs` worker threads. Each run is single-threaded
/// and owns its model, so results are independent of `jobs`; output order
/// matches input order. The first error wins (remaining runs still finish).
pub fn run_sweep(configs: &[ExperimentConfig], jobs: usize) -> Result<Vec<RunOutcome>> {
    let jobs = jobs.max(1).min(configs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutcome>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let outcome = run(&configs[i]);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}

pub fn append_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut line = serde_json::to_string(report)?;
    line.push('\n');
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    file.write_all(line.as_bytes())?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<ExperimentReport>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn join_pct(xs: &[f64]) -> String {
    if xs.is_empty() {
        "-".to_string()
    } else {
        xs.iter().map(|x| pct(*x)).collect::<Vec<_>>().join(" ")
    }
}

/// Fixed-width text tables: one row per run, then one row per attack.
/// Percentages carry two decimals; output is diff-stable.
pub fn render_tables(reports: &[ExperimentReport]) -> String {
    let mut rows: Vec<[String; 4]> = vec![[
        "run".into(),
        "TER%".into(),
        "BER%".into(),
        "task loss".into(),
    ]];
    for r in reports {
        rows.push([
            r.label.clone(),
            pct(r.ter),
            join_pct(&r.ber),
            format!("{:.6}", r.final_task_loss),
        ]);
    }
    let mut out = render_aligned(&rows);

    let mut attack_rows: Vec<[String; 4]> = vec![[
        "run".into(),
        "attack".into(),
        "TER% before -> after".into(),
        "BER% before -> after".into(),
    ]];
    for r in reports {
        for a in &r.attacks {
            attack_rows.push([
                r.label.clone(),
                a.attack.describe(),
                format!("{} -> {}", pct(a.ter_before), pct(a.ter_after)),
                format!("{} -> {}", join_pct(&a.ber_before), join_pct(&a.ber_after)),
            ]);
        }
    }
    if attack_rows.len() > 1 {
        out.push('\n');
        out.push_str(&render_aligned(&attack_rows));
    }
    out
}

fn render_aligned<const N: usize>(rows: &[[String; N]]) -> String {
    let mut widths = [0usize; N];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if j + 1 < N {
                for _ in 0..widths[j].saturating_sub(cell.len()) {
                    line.push(' ');
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (N - 1);
            out.extend(std::iter::repeat_n('-', total));
            out.push('\n');
        }
    }
    out
}
