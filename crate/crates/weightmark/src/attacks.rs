//! Unintentional attacks: fine-tuning with the plain task loss, and two
//! pruning variants that zero weights of the embedding layer. Every attack
//! works on a copy — the input model is never mutated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::data::Dataset;
use crate::nn::network::Network;
use crate::nn::train::{measure_bers, train, EmbedSpec, TrainConfig, TrainHistory};
use crate::rng::Prng;

pub const DEFAULT_FINETUNE_EPOCHS: usize = 20;

fn default_finetune_epochs() -> usize {
    DEFAULT_FINETUNE_EPOCHS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    #[serde(default = "default_finetune_epochs")]
    pub epochs: usize,
    /// None reuses the last-stage learning rate of the base schedule.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

/// Retrain with the task loss only (lambda = 0, no schedule, fresh momentum).
/// Batch size and momentum follow the base config the model was trained with.
pub fn finetune(
    net: &Network,
    data: &Dataset,
    base: &TrainConfig,
    cfg: &FinetuneConfig,
) -> Result<(Network, TrainHistory)> {
    let mut tuned = net.clone();
    if cfg.epochs == 0 {
        return Ok((tuned, TrainHistory { epochs: Vec::new() }));
    }
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: base.batch_size,
        learning_rate: cfg
            .learning_rate
            .unwrap_or_else(|| base.final_learning_rate()),
        momentum: base.momentum,
        lr_schedule: Vec::new(),
        seed: cfg.seed,
        lambda: 0.0,
    };
    let (history, _) = train(&mut tuned, data, &tcfg, &[])?;
    Ok((tuned, history))
}

/// Round-half-up share of `total` hit at pruning rate `p`.
fn pruned_count(p: f64, total: usize) -> usize {
    (p * total as f64 + 0.5).floor() as usize
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "pruning rate must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

fn pruned_layer(net: &Network, layer_id: &str, p: f64) -> Result<(Network, usize, usize)> {
    check_rate(p)?;
    let idx = net.layer_index(layer_id)?;
    if net.layer_params(idx).is_none() {
        return Err(Error::InvalidEmbedSpec(format!(
            "layer `{layer_id}` has no weights to prune"
        )));
    }
    let total = net.layer_params(idx).unwrap().weights.values().len();
    Ok((net.clone(), idx, pruned_count(p, total)))
}

/// Zero `round(p * count)` distinct, uniformly chosen weights of one layer.
/// Biases and every other layer stay untouched.
pub fn prune_random(net: &Network, layer_id: &str, p: f64, seed: u64) -> Result<Network> {
    let (mut pruned, idx, k) = pruned_layer(net, layer_id, p)?;
    let weights = pruned.layer_params_mut(idx).unwrap().weights.values_mut();
    let mut rng = Prng::seed_from_u64(seed);
    for i in rng.sample_indices(weights.len(), k) {
        weights[i] = 0.0;
    }
    Ok(pruned)
}

/// Zero the `round(p * count)` smallest-magnitude weights of one layer,
/// breaking magnitude ties by index order.
pub fn prune_magnitude(net: &Network, layer_id: &str, p: f64) -> Result<Network> {
    let (mut pruned, idx, k) = pruned_layer(net, layer_id, p)?;
    let weights = pruned.layer_params_mut(idx).unwrap().weights.values_mut();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        weights[a]
            .abs()
            .total_cmp(&weights[b].abs())
            .then(a.cmp(&b))
    });
    for &i in &order[..k] {
        weights[i] = 0.0;
    }
    Ok(pruned)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    Finetune {
        #[serde(default = "default_finetune_epochs")]
        epochs: usize,
        #[serde(default)]
        learning_rate: Option<f64>,
        seed: u64,
    },
    PruneRandom {
        layer: String,
        rate: f64,
        seed: u64,
    },
    PruneMagnitude {
        layer: String,
        rate: f64,
    },
}

impl AttackKind {
    pub fn describe(&self) -> String {
        match self {
            AttackKind::Finetune { epochs, learning_rate, .. } => match learning_rate {
                Some(lr) => format!("finetune({epochs} epochs, lr {lr})"),
                None => format!("finetune({epochs} epochs)"),
            },
            AttackKind::PruneRandom { layer, rate, .. } => {
                format!("prune_random({layer}, {:.0}%)", rate * 100.0)
            }
            AttackKind::PruneMagnitude { layer, rate } => {
                format!("prune_magnitude({layer}, {:.0}%)", rate * 100.0)
            }
        }
    }
}

/// One attack, with the source model's metrics for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: AttackKind,
    pub ter_before: f64,
    pub ter_after: f64,
    /// One entry per embed spec, in spec order.
    pub ber_before: Vec<f64>,
    pub ber_after: Vec<f64>,
}

pub fn apply_attack(
    net: &Network,
    data: &Dataset,
    base: &TrainConfig,
    attack: &AttackKind,
) -> Result<Network> {
    match attack {
        AttackKind::Finetune { epochs, learning_rate, seed } => {
            let cfg = FinetuneConfig {
                epochs: *epochs,
                learning_rate: *learning_rate,
                seed: *seed,
            };
            Ok(finetune(net, data, base, &cfg)?.0)
        }
        AttackKind::PruneRandom { layer, rate, seed } => {
            prune_random(net, layer, *rate, *seed)
        }
        AttackKind::PruneMagnitude { layer, rate } => prune_magnitude(net, layer, *rate),
    }
}

/// Run every attack against the same source model and re-extract after each.
pub fn run_attack_suite(
    net: &Network,
    data: &Dataset,
    base: &TrainConfig,
    embeds: &[EmbedSpec],
    attacks: &[AttackKind],
) -> Result<Vec<AttackReport>> {
    let ter_before = net.evaluate(&data.test_x, &data.test_y)?;
    let ber_before = measure_bers(net, embeds)?;
    attacks
        .iter()
        .map(|attack| {
            let hit = apply_attack(net, data, base, attack)?;
            Ok(AttackReport {
                attack: attack.clone(),
                ter_before,
                ter_after: hit.evaluate(&data.test_x, &data.test_y)?,
                ber_before: ber_before.clone(),
                ber_after: measure_bers(&hit, embeds)?,
            })
        })
        .collect()
}
