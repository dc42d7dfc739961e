//! Mini-batch SGD with Nesterov momentum and watermark-regularized loss.
//!
//! Each step minimizes E = E_0 + lambda * sum of E_R over the embed specs:
//! the batch-mean task gradient plus, for every spec, lambda times the
//! regularizer gradient routed through the filter-mean adjoint onto the
//! host layer's weights. The velocity update is
//!
//!   v <- mu * v + g,    w <- w - eta * (g + mu * v)
//!
//! (Nesterov form; mu = 0 reduces to plain SGD). Everything is driven by
//! explicit seeds: given (network init seed, data seed, train seed) the
//! final weights are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::ProjectionKey;
use crate::message::{bit_error_rate, WatermarkMessage};
use crate::nn::data::Dataset;
use crate::nn::network::{GradBuffers, Network};
use crate::regularizer::{DecoderKind, WatermarkRegularizer};
use crate::rng::Prng;
use crate::tensor::unflatten_gradient;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDrop {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Nesterov momentum coefficient in [0, 1).
    pub momentum: f64,
    #[serde(default)]
    pub lr_schedule: Vec<LrDrop>,
    /// Seed of the per-epoch shuffle stream.
    pub seed: u64,
    /// Weight of the watermark term; 0 trains watermark-free.
    #[serde(default)]
    pub lambda: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        let mut prev: Option<usize> = None;
        for drop in &self.lr_schedule {
            if drop.epoch >= self.epochs {
                return Err(Error::InvalidConfig(format!(
                    "schedule epoch {} is outside the {}-epoch run",
                    drop.epoch, self.epochs
                )));
            }
            if let Some(p) = prev {
                if drop.epoch <= p {
                    return Err(Error::InvalidConfig(
                        "schedule epochs must be strictly increasing".into(),
                    ));
                }
            }
            if !(drop.factor > 0.0 && drop.factor.is_finite()) {
                return Err(Error::InvalidConfig("schedule factors must be positive".into()));
            }
            prev = Some(drop.epoch);
        }
        Ok(())
    }

    /// Learning rate in force during the final epoch (base times every
    /// schedule factor). Fine-tuning attacks default to this stage.
    pub fn final_learning_rate(&self) -> f64 {
        self.lr_schedule
            .iter()
            .fold(self.learning_rate, |lr, d| lr * d.factor)
    }
}

/// Binds one watermark to one trainable layer.
#[derive(Debug, Clone)]
pub struct EmbedSpec {
    pub layer_id: String,
    pub key: ProjectionKey,
    pub message: WatermarkMessage,
    pub decoder: DecoderKind,
}

impl EmbedSpec {
    /// Check this spec against a concrete network and build its regularizer.
    pub fn resolve(&self, net: &Network) -> Result<(usize, WatermarkRegularizer)> {
        let idx = net.layer_index(&self.layer_id)?;
        let params = net.layer_params(idx).ok_or_else(|| {
            Error::InvalidEmbedSpec(format!("layer `{}` has no weights", self.layer_id))
        })?;
        let v = params.weights.shape().host_len();
        if self.key.cols() != v {
            return Err(Error::InvalidEmbedSpec(format!(
                "key is for host length {}, layer `{}` has v = {v}",
                self.key.cols(),
                self.layer_id
            )));
        }
        let reg = WatermarkRegularizer::new(
            self.key.clone(),
            self.message.clone(),
            self.decoder,
        )?;
        Ok((idx, reg))
    }
}

/// Momentum buffers, parallel to the network's trainable layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl SgdState {
    pub fn zeros(net: &Network) -> Self {
        SgdState {
            velocity: net
                .specs()
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    net.layer_params(i)
                        .map(|p| (vec![0.0; p.weights.values().len()], vec![0.0; p.bias.len()]))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean task cross-entropy over the epoch's steps.
    pub task_loss: f64,
    /// End-of-epoch regularizer value per embed spec.
    pub reg_loss: Vec<f64>,
    pub train_error: f64,
    pub test_error: f64,
    /// End-of-epoch bit error rate per embed spec.
    pub ber: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_test_error(&self) -> f64 {
        self.last().map(|e| e.test_error).unwrap_or(f64::NAN)
    }

    pub fn final_ber(&self) -> Vec<f64> {
        self.last().map(|e| e.ber.clone()).unwrap_or_default()
    }

    pub fn final_task_loss(&self) -> f64 {
        self.last().map(|e| e.task_loss).unwrap_or(f64::NAN)
    }

    pub fn final_reg_loss(&self) -> Vec<f64> {
        self.last().map(|e| e.reg_loss.clone()).unwrap_or_default()
    }
}

pub fn apply_sgd(
    net: &mut Network,
    grads: &GradBuffers,
    state: &mut SgdState,
    lr: f64,
    mu: f64,
) {
    for idx in net.trainable_indices() {
        let (gw, gb) = grads.layers[idx].as_ref().unwrap();
        let (vw, vb) = state.velocity[idx].as_mut().unwrap();
        let p = net.layer_params_mut(idx).unwrap();
        for ((w, &g), v) in p.weights.values_mut().iter_mut().zip(gw).zip(vw.iter_mut()) {
            *v = mu * *v + g;
            *w -= lr * (g + mu * *v);
        }
        for ((b, &g), v) in p.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
            *v = mu * *v + g;
            *b -= lr * (g + mu * *v);
        }
    }
}

/// Train in place; returns the per-epoch history and the final optimizer
/// state. Embeds must target distinct trainable layers.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    embeds: &[EmbedSpec],
) -> Result<(TrainHistory, SgdState)> {
    cfg.validate()?;
    if data.dim != net.input_len() {
        return Err(Error::DimensionMismatch {
            context: "dataset feature count vs network input",
            expected: net.input_len(),
            actual: data.dim,
        });
    }
    let mut resolved = Vec::with_capacity(embeds.len());
    for (i, spec) in embeds.iter().enumerate() {
        for other in &embeds[..i] {
            if other.layer_id == spec.layer_id {
                return Err(Error::InvalidEmbedSpec(format!(
                    "two embed specs target layer `{}`",
                    spec.layer_id
                )));
            }
        }
        resolved.push(spec.resolve(net)?);
    }

    let mut rng = Prng::seed_from_u64(cfg.seed);
    let mut ws = net.workspace();
    let mut grads = net.zero_grads();
    let mut state = SgdState::zeros(net);
    let mut lr = cfg.learning_rate;
    let mut indices: Vec<usize> = (0..data.train_len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        for drop in &cfg.lr_schedule {
            if drop.epoch == epoch {
                lr *= drop.factor;
            }
        }
        rng.shuffle(&mut indices);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut correct = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            let (task_loss, ok) =
                net.batch_gradient(&data.train_x, &data.train_y, batch, &mut ws, &mut grads)?;
            if !task_loss.is_finite() {
                return Err(Error::Diverged { epoch, step: steps });
            }
            if cfg.lambda > 0.0 {
                for (idx, reg) in &resolved {
                    let host = net.host_flatten(*idx)?;
                    let (e_r, g) = reg.loss_and_gradient(&host)?;
                    if !e_r.is_finite() {
                        return Err(Error::Diverged { epoch, step: steps });
                    }
                    let shape = net.layer_params(*idx).unwrap().weights.shape();
                    let gt = unflatten_gradient(&g, shape)?;
                    let (dw, _) = grads.layers[*idx].as_mut().unwrap();
                    for (d, &gv) in dw.iter_mut().zip(gt.values()) {
                        *d += cfg.lambda * gv;
                    }
                }
            }
            apply_sgd(net, &grads, &mut state, lr, cfg.momentum);
            loss_sum += task_loss;
            correct += ok;
            steps += 1;
        }

        let test_error = net.evaluate(&data.test_x, &data.test_y)?;
        let mut reg_loss = Vec::with_capacity(resolved.len());
        let mut ber = Vec::with_capacity(resolved.len());
        for (idx, reg) in &resolved {
            let host = net.host_flatten(*idx)?;
            reg_loss.push(reg.loss(&host)?);
            ber.push(bit_error_rate(reg.message(), &reg.extract(&host)?)?);
        }
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            task_loss: loss_sum / steps as f64,
            reg_loss,
            train_error: 1.0 - correct as f64 / data.train_len() as f64,
            test_error,
            ber,
        });
    }
    Ok((history, state))
}

/// Extraction + BER for every embed spec against a trained network.
pub fn measure_bers(net: &Network, embeds: &[EmbedSpec]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(embeds.len());
    for spec in embeds {
        let (idx, reg) = spec.resolve(net)?;
        let host = net.host_flatten(idx)?;
        out.push(bit_error_rate(reg.message(), &reg.extract(&host)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::{synth_dataset, DataConfig, DatasetKind};
    use crate::nn::layer::LayerSpec;

    fn tiny_net(seed: u64) -> Network {
        Network::new(
            (3, 3, 1),
            vec![
                LayerSpec::Conv2d {
                    id: "conv1".into(),
                    kernel: 3,
                    in_channels: 1,
                    filters: 4,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPoolGlobal,
                LayerSpec::Dense {
                    id: "fc".into(),
                    inputs: 4,
                    outputs: 2,
                },
                LayerSpec::SoftmaxHead,
            ],
            seed,
        )
        .unwrap()
    }

    fn tiny_data() -> Dataset {
        synth_dataset(&DataConfig {
            kind: DatasetKind::GaussianBlobs,
            classes: 2,
            per_class: 16,
            features: 9,
            noise: 0.3,
            seed: 5,
            train_fraction: 0.75,
        })
        .unwrap()
    }

    fn base_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            lr_schedule: vec![LrDrop { epoch: 3, factor: 0.2 }],
            seed: 99,
            lambda: 0.0,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = base_cfg();
        c.lr_schedule = vec![LrDrop { epoch: 5, factor: 0.2 }];
        assert!(c.validate().is_err());
        c.lr_schedule = vec![
            LrDrop { epoch: 2, factor: 0.2 },
            LrDrop { epoch: 2, factor: 0.2 },
        ];
        assert!(c.validate().is_err());
        c.lr_schedule = vec![];
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c.momentum = 0.9;
        c.lambda = -0.1;
        assert!(c.validate().is_err());

        let c = TrainConfig {
            learning_rate: 0.01,
            lr_schedule: vec![
                LrDrop { epoch: 1, factor: 0.2 },
                LrDrop { epoch: 2, factor: 0.2 },
            ],
            ..base_cfg()
        };
        assert!((c.final_learning_rate() - 0.0004).abs() < 1e-15);
    }

    #[test]
    fn training_learns_the_tiny_task() {
        let mut net = tiny_net(1);
        let data = tiny_data();
        let cfg = TrainConfig { epochs: 30, ..base_cfg() };
        let (history, _) = train(&mut net, &data, &cfg, &[]).unwrap();
        assert_eq!(history.epochs.len(), 30);
        // Well-separated blobs: the task is learnable to zero test error.
        assert_eq!(history.final_test_error(), 0.0);
        // Schedule drop is visible in the recorded learning rate.
        assert!((history.epochs[2].learning_rate - 0.05).abs() < 1e-15);
        assert!((history.epochs[3].learning_rate - 0.01).abs() < 1e-15);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = tiny_data();
        let run = || {
            let mut net = tiny_net(7);
            train(&mut net, &data, &base_cfg(), &[]).unwrap();
            net
        };
        let a = run();
        let b = run();
        for idx in a.trainable_indices() {
            assert_eq!(
                a.layer_params(idx).unwrap().weights.values(),
                b.layer_params(idx).unwrap().weights.values()
            );
        }
        // A different shuffle seed changes the trajectory.
        let mut net = tiny_net(7);
        let cfg = TrainConfig { seed: 100, ..base_cfg() };
        train(&mut net, &data, &cfg, &[]).unwrap();
        assert_ne!(
            net.layer_params(0).unwrap().weights.values(),
            a.layer_params(0).unwrap().weights.values()
        );
    }

    #[test]
    fn lambda_zero_with_embeds_matches_watermark_free_training() {
        let data = tiny_data();
        let spec = EmbedSpec {
            layer_id: "conv1".into(),
            key: ProjectionKey::generate(3, 4, 9),
            message: WatermarkMessage::random(4, 4),
            decoder: DecoderKind::Ss { gamma: 10.0 },
        };
        let mut plain = tiny_net(7);
        train(&mut plain, &data, &base_cfg(), &[]).unwrap();
        let mut with = tiny_net(7);
        train(&mut with, &data, &base_cfg(), &[spec]).unwrap();
        for idx in plain.trainable_indices() {
            assert_eq!(
                plain.layer_params(idx).unwrap().weights.values(),
                with.layer_params(idx).unwrap().weights.values()
            );
        }
    }

    #[test]
    fn watermark_embeds_on_the_tiny_net() {
        let data = tiny_data();
        let spec = EmbedSpec {
            layer_id: "conv1".into(),
            key: ProjectionKey::generate(11, 6, 9),
            message: WatermarkMessage::random(12, 6),
            decoder: DecoderKind::Stdm { alpha: 10.0, beta: 10.0 },
        };
        let mut net = tiny_net(2);
        // The late learning-rate drops matter: they quench the regularizer
        // dynamics so projections settle inside their decision cells.
        let cfg = TrainConfig {
            epochs: 60,
            lambda: 0.05,
            lr_schedule: vec![
                LrDrop { epoch: 20, factor: 0.2 },
                LrDrop { epoch: 40, factor: 0.2 },
            ],
            ..base_cfg()
        };
        let (history, _) = train(&mut net, &data, &cfg, std::slice::from_ref(&spec)).unwrap();
        assert_eq!(*history.final_ber().first().unwrap(), 0.0);
        assert_eq!(measure_bers(&net, &[spec]).unwrap(), vec![0.0]);
    }

    #[test]
    fn embed_validation_failures() {
        let net = tiny_net(1);
        let data = tiny_data();

        // Key host length mismatch.
        let bad = EmbedSpec {
            layer_id: "conv1".into(),
            key: ProjectionKey::generate(1, 4, 10),
            message: WatermarkMessage::random(2, 4),
            decoder: DecoderKind::Ss { gamma: 10.0 },
        };
        assert!(matches!(
            bad.resolve(&net),
            Err(Error::InvalidEmbedSpec(_))
        ));

        // Unknown layer.
        let missing = EmbedSpec {
            layer_id: "conv9".into(),
            key: ProjectionKey::generate(1, 4, 9),
            message: WatermarkMessage::random(2, 4),
            decoder: DecoderKind::Ss { gamma: 10.0 },
        };
        assert!(matches!(
            missing.resolve(&net),
            Err(Error::LayerNotFound { .. })
        ));

        // Duplicate targets.
        let spec = EmbedSpec {
            layer_id: "conv1".into(),
            key: ProjectionKey::generate(1, 4, 9),
            message: WatermarkMessage::random(2, 4),
            decoder: DecoderKind::Ss { gamma: 10.0 },
        };
        let mut net2 = tiny_net(1);
        let cfg = TrainConfig { lambda: 0.01, ..base_cfg() };
        assert!(matches!(
            train(&mut net2, &data, &cfg, &[spec.clone(), spec]),
            Err(Error::InvalidEmbedSpec(_))
        ));
    }

    #[test]
    fn divergence_is_detected() {
        let mut net = tiny_net(1);
        let data = tiny_data();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            momentum: 0.0,
            lr_schedule: vec![],
            ..base_cfg()
        };
        assert!(matches!(
            train(&mut net, &data, &cfg, &[]),
            Err(Error::Diverged { .. })
        ));
    }
}
